#pragma once

#include <filesystem>

#include "io.hpp"
#include "synth.hpp"

// On-disk layout of a synthetic case: one directory holding the volumes,
// the landmark csv, and a small manifest.

namespace volreg::io {

inline void write_case(const PhantomCase& c, const fs::path& dir) {
    fs::create_directories(dir);
    write_volume(c.moving, dir / "moving.vpv.json");
    write_volume(c.fixed, dir / "fixed.vpv.json");
    write_volume(c.organ_moving, dir / "organ_moving.vpv.json");
    write_volume(c.organ_fixed, dir / "organ_fixed.vpv.json");
    write_volume(c.tumor_moving, dir / "tumor_moving.vpv.json");
    write_volume(c.tumor_fixed, dir / "tumor_fixed.vpv.json");
    write_volume(c.gt_field, dir / "gt_field.vpv.json");
    write_landmarks(c.landmarks, dir / "landmarks.csv");
    nlohmann::json j;
    j["scenario"] = to_string(c.scenario);
    j["dims"] = c.moving.grid().dims();
    j["spacing_mm"] = c.moving.grid().spacing();
    j["version"] = kVersion;
    write_json_file(j, dir / "case.json");
}

struct CaseOnDisk {
    Scenario scenario;
    ScalarVolume moving;
    ScalarVolume fixed;
    BinaryMask organ_moving;
    BinaryMask organ_fixed;
    BinaryMask tumor_moving;
    BinaryMask tumor_fixed;
    LandmarkSet landmarks;
    DisplacementField gt_field;
};

inline CaseOnDisk read_case(const fs::path& dir) {
    auto manifest_path = dir / "case.json";
    std::vector<char> text = detail::read_all(manifest_path);
    nlohmann::json j = nlohmann::json::parse(text.begin(), text.end(), nullptr, false);
    if (j.is_discarded()) throw IoError(manifest_path.string() + ": invalid json");
    Scenario sc;
    try {
        sc = parse_scenario(j.at("scenario").get<std::string>());
    } catch (const nlohmann::json::exception& e) {
        throw IoError(manifest_path.string() + ": bad manifest: " + e.what());
    }
    ScalarVolume moving = read_scalar_volume(dir / "moving.vpv.json");
    GridInfo grid = moving.grid();
    return CaseOnDisk{sc,
                      std::move(moving),
                      read_scalar_volume(dir / "fixed.vpv.json"),
                      read_binary_mask(dir / "organ_moving.vpv.json"),
                      read_binary_mask(dir / "organ_fixed.vpv.json"),
                      read_binary_mask(dir / "tumor_moving.vpv.json"),
                      read_binary_mask(dir / "tumor_fixed.vpv.json"),
                      read_landmarks(dir / "landmarks.csv", grid),
                      read_displacement_field(dir / "gt_field.vpv.json")};
}

} // namespace volreg::io
