#pragma once

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "core.hpp"

// Volume container: a small json header `<name>.vpv.json` next to a raw
// little-endian payload. Scalar images, soft masks and fields are f32,
// binary masks are u8. Field payloads are planar (all ux, then uy, uz).

namespace volreg::io {

namespace fs = std::filesystem;

struct VolumeHeader {
    std::array<int, 3> dims;
    std::array<double, 3> spacing_mm;
    std::string dtype;   // "f32" or "u8"
    int channels;        // 1 or 3
    fs::path raw_path;   // resolved against the header directory
};

namespace detail {

inline void byte_swap_f32(std::vector<char>& bytes) {
    for (std::size_t i = 0; i + 3 < bytes.size(); i += 4) {
        std::swap(bytes[i], bytes[i + 3]);
        std::swap(bytes[i + 1], bytes[i + 2]);
    }
}

inline std::vector<char> read_all(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    if (!f) throw IoError("cannot open " + p.string());
    f.seekg(0, std::ios::end);
    std::streamoff len = f.tellg();
    f.seekg(0);
    std::vector<char> bytes(static_cast<std::size_t>(len));
    if (len > 0) f.read(bytes.data(), len);
    if (!f) throw IoError("read failed: " + p.string());
    return bytes;
}

inline void write_all(const fs::path& p, const char* data, std::size_t len) {
    std::ofstream f(p, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open " + p.string() + " for writing");
    f.write(data, static_cast<std::streamsize>(len));
    if (!f) throw IoError("write failed: " + p.string());
}

inline fs::path raw_name_for(const fs::path& header_path) {
    std::string name = header_path.filename().string();
    const std::string suffix = ".vpv.json";
    if (name.size() > suffix.size() && name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0)
        name.resize(name.size() - suffix.size());
    return name + ".raw";
}

inline void write_header(const fs::path& path, const GridInfo& grid,
                         const char* dtype, int channels, const fs::path& raw_name) {
    nlohmann::json j;
    j["dims"] = grid.dims();
    j["spacing_mm"] = grid.spacing();
    j["dtype"] = dtype;
    j["channels"] = channels;
    j["layout"] = "planar";
    j["order"] = "x-fastest";
    j["endian"] = "little";
    j["data"] = raw_name.string();
    std::string text = j.dump(2) + "\n";
    write_all(path, text.data(), text.size());
}

inline void write_f32_raw(const fs::path& path, const std::vector<double>& values) {
    std::vector<char> bytes(values.size() * 4);
    for (std::size_t i = 0; i < values.size(); ++i) {
        float f = static_cast<float>(values[i]);
        std::memcpy(bytes.data() + i * 4, &f, 4);
    }
    if constexpr (std::endian::native == std::endian::big) byte_swap_f32(bytes);
    write_all(path, bytes.data(), bytes.size());
}

inline std::vector<double> read_f32_raw(const fs::path& path, std::size_t expected) {
    std::vector<char> bytes = read_all(path);
    if (bytes.size() != expected * 4)
        throw IoError(path.string() + ": payload is " + std::to_string(bytes.size()) +
                      " bytes, expected " + std::to_string(expected * 4));
    if constexpr (std::endian::native == std::endian::big) byte_swap_f32(bytes);
    std::vector<double> values(expected);
    for (std::size_t i = 0; i < expected; ++i) {
        float f;
        std::memcpy(&f, bytes.data() + i * 4, 4);
        if (!std::isfinite(f))
            throw IoError(path.string() + ": non-finite value at element " + std::to_string(i));
        values[i] = f;
    }
    return values;
}

} // namespace detail

inline VolumeHeader read_header(const fs::path& header_path) {
    std::vector<char> text = detail::read_all(header_path);
    nlohmann::json j = nlohmann::json::parse(text.begin(), text.end(), nullptr, false);
    if (j.is_discarded()) throw IoError(header_path.string() + ": invalid json");
    for (const char* key : {"dims", "spacing_mm", "dtype", "channels", "layout", "order", "endian", "data"}) {
        if (!j.contains(key))
            throw IoError(header_path.string() + ": missing key '" + key + "'");
    }
    VolumeHeader h;
    try {
        h.dims = j.at("dims").get<std::array<int, 3>>();
        h.spacing_mm = j.at("spacing_mm").get<std::array<double, 3>>();
        h.dtype = j.at("dtype").get<std::string>();
        h.channels = j.at("channels").get<int>();
        if (j.at("layout").get<std::string>() != "planar")
            throw IoError(header_path.string() + ": unsupported layout");
        if (j.at("order").get<std::string>() != "x-fastest")
            throw IoError(header_path.string() + ": unsupported order");
        if (j.at("endian").get<std::string>() != "little")
            throw IoError(header_path.string() + ": unsupported endianness");
        h.raw_path = header_path.parent_path() / j.at("data").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
        throw IoError(header_path.string() + ": bad header field: " + e.what());
    }
    if (h.dtype != "f32" && h.dtype != "u8")
        throw IoError(header_path.string() + ": unsupported dtype '" + h.dtype + "'");
    if (h.channels != 1 && h.channels != 3)
        throw IoError(header_path.string() + ": unsupported channel count");
    return h;
}

inline void write_volume(const ScalarVolume& v, const fs::path& header_path) {
    fs::path raw = detail::raw_name_for(header_path);
    detail::write_header(header_path, v.grid(), "f32", 1, raw);
    detail::write_f32_raw(header_path.parent_path() / raw, v.values());
}

inline void write_volume(const SoftMask& m, const fs::path& header_path) {
    fs::path raw = detail::raw_name_for(header_path);
    detail::write_header(header_path, m.grid(), "f32", 1, raw);
    detail::write_f32_raw(header_path.parent_path() / raw, m.values());
}

inline void write_volume(const DisplacementField& f, const fs::path& header_path) {
    fs::path raw = detail::raw_name_for(header_path);
    detail::write_header(header_path, f.grid(), "f32", 3, raw);
    detail::write_f32_raw(header_path.parent_path() / raw, f.data());
}

inline void write_volume(const BinaryMask& m, const fs::path& header_path) {
    fs::path raw = detail::raw_name_for(header_path);
    detail::write_header(header_path, m.grid(), "u8", 1, raw);
    std::vector<char> bytes(m.values().size());
    std::memcpy(bytes.data(), m.values().data(), bytes.size());
    detail::write_all(header_path.parent_path() / raw, bytes.data(), bytes.size());
}

namespace detail {

inline GridInfo grid_of(const VolumeHeader& h) {
    return GridInfo(h.dims, h.spacing_mm);
}

inline void require_kind(const VolumeHeader& h, const fs::path& p, const char* dtype, int channels) {
    if (h.dtype != dtype || h.channels != channels)
        throw IoError(p.string() + ": expected " + dtype + " x" + std::to_string(channels) +
                      ", file holds " + h.dtype + " x" + std::to_string(h.channels));
}

} // namespace detail

inline ScalarVolume read_scalar_volume(const fs::path& header_path) {
    VolumeHeader h = read_header(header_path);
    detail::require_kind(h, header_path, "f32", 1);
    GridInfo grid = detail::grid_of(h);
    return ScalarVolume(grid, detail::read_f32_raw(h.raw_path, grid.voxel_count()));
}

inline SoftMask read_soft_mask(const fs::path& header_path) {
    VolumeHeader h = read_header(header_path);
    detail::require_kind(h, header_path, "f32", 1);
    GridInfo grid = detail::grid_of(h);
    std::vector<double> v = detail::read_f32_raw(h.raw_path, grid.voxel_count());
    for (double x : v) {
        if (!(x >= 0.0 && x <= 1.0))
            throw IoError(header_path.string() + ": soft mask value outside [0, 1]");
    }
    return SoftMask(grid, std::move(v));
}

inline DisplacementField read_displacement_field(const fs::path& header_path) {
    VolumeHeader h = read_header(header_path);
    detail::require_kind(h, header_path, "f32", 3);
    GridInfo grid = detail::grid_of(h);
    return DisplacementField(grid, detail::read_f32_raw(h.raw_path, 3 * grid.voxel_count()));
}

inline BinaryMask read_binary_mask(const fs::path& header_path) {
    VolumeHeader h = read_header(header_path);
    detail::require_kind(h, header_path, "u8", 1);
    GridInfo grid = detail::grid_of(h);
    std::vector<char> bytes = detail::read_all(h.raw_path);
    if (bytes.size() != grid.voxel_count())
        throw IoError(h.raw_path.string() + ": payload is " + std::to_string(bytes.size()) +
                      " bytes, expected " + std::to_string(grid.voxel_count()));
    std::vector<std::uint8_t> v(bytes.size());
    std::memcpy(v.data(), bytes.data(), bytes.size());
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (v[i] > 1)
            throw IoError(h.raw_path.string() + ": mask byte " + std::to_string(v[i]) +
                          " at element " + std::to_string(i));
    }
    return BinaryMask(grid, std::move(v));
}

// Landmarks: csv with header `id,space,x,y,z`, coordinates in voxel units.

inline void write_landmarks(const LandmarkSet& lms, const fs::path& path) {
    std::ostringstream out;
    out << "id,space,x,y,z\n";
    char buf[128];
    for (const auto& p : lms.pairs()) {
        std::snprintf(buf, sizeof(buf), "%s,fixed,%.17g,%.17g,%.17g\n",
                      p.id.c_str(), p.fixed_pos[0], p.fixed_pos[1], p.fixed_pos[2]);
        out << buf;
        std::snprintf(buf, sizeof(buf), "%s,moving,%.17g,%.17g,%.17g\n",
                      p.id.c_str(), p.moving_pos[0], p.moving_pos[1], p.moving_pos[2]);
        out << buf;
    }
    std::string text = out.str();
    detail::write_all(path, text.data(), text.size());
}

inline LandmarkSet read_landmarks(const fs::path& path, const GridInfo& grid) {
    std::vector<char> bytes = detail::read_all(path);
    std::istringstream in(std::string(bytes.begin(), bytes.end()));
    std::string line;
    if (!std::getline(in, line)) throw IoError(path.string() + ": empty file");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != "id,space,x,y,z")
        throw IoError(path.string() + ": expected header 'id,space,x,y,z'");
    std::vector<Landmark> entries;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::array<std::string, 5> fields;
        std::size_t start = 0;
        for (int f = 0; f < 5; ++f) {
            std::size_t comma = line.find(',', start);
            if (f < 4) {
                if (comma == std::string::npos)
                    throw IoError(path.string() + ":" + std::to_string(lineno) + ": expected 5 fields");
                fields[f] = line.substr(start, comma - start);
                start = comma + 1;
            } else {
                if (comma != std::string::npos)
                    throw IoError(path.string() + ":" + std::to_string(lineno) + ": expected 5 fields");
                fields[f] = line.substr(start);
            }
        }
        Landmark lm;
        lm.id = fields[0];
        if (lm.id.empty())
            throw IoError(path.string() + ":" + std::to_string(lineno) + ": empty id");
        if (fields[1] == "fixed") lm.space = LandmarkSpace::fixed;
        else if (fields[1] == "moving") lm.space = LandmarkSpace::moving;
        else throw IoError(path.string() + ":" + std::to_string(lineno) +
                           ": space must be 'fixed' or 'moving'");
        for (int a = 0; a < 3; ++a) {
            const std::string& s = fields[2 + a];
            char* end = nullptr;
            double v = std::strtod(s.c_str(), &end);
            if (s.empty() || end != s.c_str() + s.size() || !std::isfinite(v))
                throw IoError(path.string() + ":" + std::to_string(lineno) +
                              ": bad coordinate '" + s + "'");
            lm.pos[a] = v;
        }
        entries.push_back(std::move(lm));
    }
    return LandmarkSet(entries, grid);
}

// Config files: flat json, same key names as the struct fields. Absent keys
// keep their defaults; unknown keys are rejected.

inline nlohmann::json config_to_json(const RegistrationConfig& c) {
    nlohmann::json j;
    j["alpha_vp"] = c.alpha_vp;
    j["alpha_reg"] = c.alpha_reg;
    j["sim_weight"] = c.sim_weight;
    j["pyramid_levels"] = c.pyramid_levels;
    j["iterations_per_level"] = c.iterations_per_level;
    j["step_size"] = c.step_size;
    j["moment_beta1"] = c.moment_beta1;
    j["moment_beta2"] = c.moment_beta2;
    j["moment_eps"] = c.moment_eps;
    j["transform"] = to_string(c.transform);
    j["bilateral_sigma_space"] = c.bilateral_sigma_space;
    j["bilateral_sigma_range"] = c.bilateral_sigma_range;
    j["seed"] = c.seed;
    return j;
}

inline RegistrationConfig config_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw ValidationError("config: expected a json object");
    RegistrationConfig c;
    try {
        for (auto it = j.begin(); it != j.end(); ++it) {
            const std::string& k = it.key();
            if (k == "alpha_vp") c.alpha_vp = it.value().get<double>();
            else if (k == "alpha_reg") c.alpha_reg = it.value().get<double>();
            else if (k == "sim_weight") c.sim_weight = it.value().get<double>();
            else if (k == "pyramid_levels") c.pyramid_levels = it.value().get<int>();
            else if (k == "iterations_per_level") c.iterations_per_level = it.value().get<std::vector<int>>();
            else if (k == "step_size") c.step_size = it.value().get<double>();
            else if (k == "moment_beta1") c.moment_beta1 = it.value().get<double>();
            else if (k == "moment_beta2") c.moment_beta2 = it.value().get<double>();
            else if (k == "moment_eps") c.moment_eps = it.value().get<double>();
            else if (k == "transform") c.transform = parse_transform(it.value().get<std::string>());
            else if (k == "bilateral_sigma_space") c.bilateral_sigma_space = it.value().get<double>();
            else if (k == "bilateral_sigma_range") c.bilateral_sigma_range = it.value().get<double>();
            else if (k == "seed") c.seed = it.value().get<std::int64_t>();
            else throw ValidationError("config: unknown key '" + k + "'");
        }
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("config: bad value type: ") + e.what());
    }
    c.validate();
    return c;
}

inline RegistrationConfig read_config(const fs::path& path) {
    std::vector<char> text = detail::read_all(path);
    nlohmann::json j = nlohmann::json::parse(text.begin(), text.end(), nullptr, false);
    if (j.is_discarded()) throw IoError(path.string() + ": invalid json");
    return config_from_json(j);
}

inline void write_json_file(const nlohmann::json& j, const fs::path& path) {
    std::string text = j.dump(2) + "\n";
    detail::write_all(path, text.data(), text.size());
}

} // namespace volreg::io
