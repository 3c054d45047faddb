// Command-line front end: registration modes, mask estimation, the full
// two-stage pipeline, and the synth/warp/metrics utilities.

#include <cstdio>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <sys/wait.h>
#include <unistd.h>

#include <CLI11.hpp>
#include <volreg/volreg.hpp>

namespace fs = std::filesystem;
using namespace volreg;

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitValidation = 3;
constexpr int kExitNumerical = 4;

struct CommonOpts {
    std::string config_path;
    std::optional<std::int64_t> seed;
    std::string transform;
};

RegistrationConfig load_config(const CommonOpts& o) {
    RegistrationConfig cfg;
    if (!o.config_path.empty()) cfg = io::read_config(o.config_path);
    if (o.seed) cfg.seed = *o.seed;
    if (!o.transform.empty()) cfg.transform = parse_transform(o.transform);
    cfg.validate();
    return cfg;
}

void add_common(CLI::App* cmd, CommonOpts& o) {
    cmd->add_option("--config", o.config_path, "json config file; flags override its values");
    cmd->add_option("--seed", o.seed, "override the config seed");
}

SoftMask binary_to_soft(const BinaryMask& m) {
    std::vector<double> v(m.values().size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = m.values()[i] ? 1.0 : 0.0;
    return SoftMask(m.grid(), std::move(v));
}

// STM files may be written as f32 soft masks or u8 binary masks.
SoftMask load_stm(const fs::path& path) {
    io::VolumeHeader h = io::read_header(path);
    if (h.dtype == "u8") return binary_to_soft(io::read_binary_mask(path));
    return io::read_soft_mask(path);
}

nlohmann::json partial_report(const DisplacementField& field,
                              const BinaryMask* organ_moving, const BinaryMask* organ_fixed,
                              const BinaryMask* tumor_moving, const LandmarkSet* landmarks,
                              const RegistrationConfig& cfg) {
    if (organ_moving && organ_fixed && tumor_moving)
        return report_to_json(full_report(field, *organ_moving, *organ_fixed, *tumor_moving,
                                          landmarks),
                              cfg);
    nlohmann::json j;
    if (organ_moving && organ_fixed)
        j["dice_organ"] = dice(warp_mask(*organ_moving, field), *organ_fixed);
    else
        j["dice_organ"] = nullptr;
    if (landmarks) j["landmark_distance_mm"] = landmark_distance(*landmarks, field);
    else j["landmark_distance_mm"] = nullptr;
    FoldingStats fsst = folding_stats(jacobian_det(field));
    j["folding_pct"] = fsst.nonpositive_pct;
    j["jacobian_std"] = fsst.det_std;
    j["tsr_moving"] = nullptr;
    j["tsr_warped"] = nullptr;
    j["stsr"] = nullptr;
    j["config"] = io::config_to_json(cfg);
    j["version"] = kVersion;
    return j;
}

struct RegisterArgs {
    std::string moving, fixed, organ_moving, organ_fixed, tumor_moving, landmarks;
    std::string mask_source = "none";
    std::string vp = "off";
    bool skip_prereg = false;
    std::string out;
    CommonOpts common;
};

int cmd_register(const RegisterArgs& a) {
    const bool vp_on = a.vp == "on";
    ScalarVolume moving = io::read_scalar_volume(a.moving);
    ScalarVolume fixed = io::read_scalar_volume(a.fixed);
    RegistrationConfig cfg = load_config(a.common);

    std::optional<BinaryMask> organ_m, organ_f, tumor_m;
    if (!a.organ_moving.empty()) organ_m = io::read_binary_mask(a.organ_moving);
    if (!a.organ_fixed.empty()) organ_f = io::read_binary_mask(a.organ_fixed);
    if (!a.tumor_moving.empty()) tumor_m = io::read_binary_mask(a.tumor_moving);

    fs::create_directories(a.out);
    std::optional<SoftMask> stm;
    if (a.mask_source.rfind("file:", 0) == 0) {
        stm = load_stm(a.mask_source.substr(5));
    } else if (a.mask_source == "organ") {
        if (!organ_f) throw ValidationError("mask-source organ needs --organ-fixed");
        stm = binary_to_soft(*organ_f);
    } else if (a.mask_source == "estimated") {
        if (!organ_m) throw ValidationError("mask-source estimated needs --organ-moving");
        MaskEstimate est = estimate_soft_mask(moving, fixed, *organ_m, cfg, a.skip_prereg);
        io::write_volume(est.stm, fs::path(a.out) / "stm.vpv.json");
        io::write_volume(est.prereg_field, fs::path(a.out) / "field_stage1.vpv.json");
        stm = std::move(est.stm);
    }

    if (!vp_on) cfg.alpha_vp = 0.0;
    if (vp_on && !organ_m)
        throw ValidationError("--vp on needs --organ-moving for the volume penalty");
    RegistrationResult res = register_volumes(moving, fixed, organ_m ? &*organ_m : nullptr,
                                              stm ? &*stm : nullptr, cfg);

    io::write_volume(res.field, fs::path(a.out) / "field_stage2.vpv.json");
    io::write_volume(warp_scalar(moving, res.field), fs::path(a.out) / "warped.vpv.json");
    std::optional<LandmarkSet> lms;
    if (!a.landmarks.empty()) lms = io::read_landmarks(a.landmarks, moving.grid());
    io::write_json_file(partial_report(res.field, organ_m ? &*organ_m : nullptr,
                                       organ_f ? &*organ_f : nullptr,
                                       tumor_m ? &*tumor_m : nullptr, lms ? &*lms : nullptr, cfg),
                        fs::path(a.out) / "report.json");
    return 0;
}

struct EstimateArgs {
    std::string moving, fixed, organ_moving;
    bool skip_prereg = false;
    std::string out;
    CommonOpts common;
};

int cmd_estimate_mask(const EstimateArgs& a) {
    ScalarVolume moving = io::read_scalar_volume(a.moving);
    ScalarVolume fixed = io::read_scalar_volume(a.fixed);
    BinaryMask organ = io::read_binary_mask(a.organ_moving);
    RegistrationConfig cfg = load_config(a.common);

    MaskEstimate est = estimate_soft_mask(moving, fixed, organ, cfg, a.skip_prereg);

    fs::create_directories(a.out);
    io::write_volume(est.stm, fs::path(a.out) / "stm.vpv.json");
    io::write_volume(est.prereg_field, fs::path(a.out) / "field_stage1.vpv.json");

    double in_sum = 0, out_sum = 0;
    std::size_t in_n = 0, out_n = 0;
    const auto& ov = est.organ_in_fixed.values();
    const auto& sv = est.stm.values();
    for (std::size_t i = 0; i < sv.size(); ++i) {
        if (ov[i]) { in_sum += sv[i]; ++in_n; }
        else { out_sum += sv[i]; ++out_n; }
    }
    nlohmann::json j;
    j["mean_stm_inside_organ"] = in_n ? in_sum / in_n : 0.0;
    j["mean_stm_outside_organ"] = out_n ? out_sum / out_n : 0.0;
    j["organ_voxels"] = in_n;
    j["organ_ratio"] = est.organ_ratio;
    j["skip_prereg"] = a.skip_prereg;
    j["config"] = io::config_to_json(cfg);
    j["version"] = kVersion;
    io::write_json_file(j, fs::path(a.out) / "report.json");
    return 0;
}

struct PipelineArgs {
    std::vector<std::string> cases;
    bool skip_prereg = false;
    bool compare_regular = false;
    int jobs = 1;
    std::string out;
    CommonOpts common;
};

int run_pipeline_case(const io::CaseOnDisk& c, const PipelineArgs& a, const fs::path& out) {
    RegistrationConfig cfg = load_config(a.common);
    fs::create_directories(out);

    MaskEstimate est = estimate_soft_mask(c.moving, c.fixed, c.organ_moving, cfg, a.skip_prereg);
    RegistrationResult s2 = register_stage2(c.moving, c.fixed, c.organ_moving, est.stm, cfg);

    io::write_volume(est.stm, out / "stm.vpv.json");
    io::write_volume(est.prereg_field, out / "field_stage1.vpv.json");
    io::write_volume(s2.field, out / "field_stage2.vpv.json");
    io::write_volume(warp_scalar(c.moving, s2.field), out / "warped.vpv.json");
    MetricsReport rep = full_report(s2.field, c.organ_moving, c.organ_fixed, c.tumor_moving,
                                    c.landmarks.size() ? &c.landmarks : nullptr);
    io::write_json_file(report_to_json(rep, cfg), out / "report.json");

    if (a.compare_regular) {
        RegistrationResult reg = register_volumes(c.moving, c.fixed, nullptr, nullptr, cfg);
        MetricsReport rr = full_report(reg.field, c.organ_moving, c.organ_fixed, c.tumor_moving,
                                       c.landmarks.size() ? &c.landmarks : nullptr);
        io::write_json_file(report_to_json(rr, cfg), out / "report_regular.json");
    }
    return 0;
}

int cmd_pipeline(const PipelineArgs& a, const char* self) {
    if (a.cases.size() == 1)
        return run_pipeline_case(io::read_case(a.cases[0]), a, a.out);

    // several cases: each one runs in its own child process
    std::vector<pid_t> running;
    int failures = 0;
    auto reap = [&](bool block) {
        while (!running.empty()) {
            int status = 0;
            pid_t pid = waitpid(-1, &status, block ? 0 : WNOHANG);
            if (pid <= 0) break;
            running.erase(std::remove(running.begin(), running.end(), pid), running.end());
            if (!WIFEXITED(status) || WEXITSTATUS(status) != 0) ++failures;
            if (!block) continue;
            break;
        }
    };
    for (const std::string& dir : a.cases) {
        while (static_cast<int>(running.size()) >= std::max(1, a.jobs)) reap(true);
        fs::path sub = fs::path(a.out) / fs::path(dir).filename();
        pid_t pid = fork();
        if (pid < 0) throw NumericalError("pipeline: fork failed");
        if (pid == 0) {
            std::vector<std::string> args = {self, "pipeline", dir, "--out", sub.string()};
            if (!a.common.config_path.empty()) {
                args.push_back("--config");
                args.push_back(a.common.config_path);
            }
            if (a.common.seed) {
                args.push_back("--seed");
                args.push_back(std::to_string(*a.common.seed));
            }
            if (a.skip_prereg) args.push_back("--skip-prereg");
            if (a.compare_regular) args.push_back("--compare-regular");
            std::vector<char*> argv;
            for (std::string& s : args) argv.push_back(s.data());
            argv.push_back(nullptr);
            execv(self, argv.data());
            _exit(127);
        }
        running.push_back(pid);
    }
    while (!running.empty()) reap(true);
    return failures ? kExitNumerical : 0;
}

struct SynthArgs {
    std::string scenario;
    std::vector<int> dims = {64, 64, 64};
    std::vector<double> spacing = {1.0, 1.0, 1.0};
    std::int64_t seed = 0;
    std::string out;
};

int cmd_synth(const SynthArgs& a) {
    if (a.dims.size() != 3) throw ValidationError("--grid needs three dimensions");
    if (a.spacing.size() != 3) throw ValidationError("--spacing needs three values");
    GridInfo grid({a.dims[0], a.dims[1], a.dims[2]}, {a.spacing[0], a.spacing[1], a.spacing[2]});
    PhantomCase c = generate_phantom(parse_scenario(a.scenario), grid,
                                     static_cast<std::uint64_t>(a.seed));
    io::write_case(c, a.out);
    return 0;
}

struct WarpArgs {
    std::string input, field, out;
};

int cmd_warp(const WarpArgs& a) {
    DisplacementField field = io::read_displacement_field(a.field);
    io::VolumeHeader h = io::read_header(a.input);
    fs::create_directories(fs::path(a.out).parent_path());
    if (h.dtype == "u8") {
        io::write_volume(warp_mask(io::read_binary_mask(a.input), field), a.out);
    } else if (h.channels == 1) {
        io::write_volume(warp_scalar(io::read_scalar_volume(a.input), field), a.out);
    } else {
        throw ValidationError("warp: input must be a scalar volume or a mask");
    }
    return 0;
}

struct MetricsArgs {
    std::string field, organ_moving, organ_fixed, tumor_moving, landmarks;
    std::string out;
    CommonOpts common;
};

int cmd_metrics(const MetricsArgs& a) {
    DisplacementField field = io::read_displacement_field(a.field);
    BinaryMask om = io::read_binary_mask(a.organ_moving);
    BinaryMask of = io::read_binary_mask(a.organ_fixed);
    BinaryMask tm = io::read_binary_mask(a.tumor_moving);
    std::optional<LandmarkSet> lms;
    if (!a.landmarks.empty()) lms = io::read_landmarks(a.landmarks, field.grid());
    RegistrationConfig cfg = load_config(a.common);
    MetricsReport rep = full_report(field, om, of, tm, lms ? &*lms : nullptr);
    fs::create_directories(a.out);
    io::write_json_file(report_to_json(rep, cfg), fs::path(a.out) / "report.json");
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"volume-preserving deformable registration"};
    app.set_version_flag("--version", kVersion);
    app.require_subcommand(1);

    RegisterArgs ra;
    CLI::App* reg = app.add_subcommand("register", "one registration with selectable mask mode");
    reg->add_option("--moving", ra.moving, "moving image")->required();
    reg->add_option("--fixed", ra.fixed, "fixed image")->required();
    reg->add_option("--organ-moving", ra.organ_moving, "organ mask in the moving frame");
    reg->add_option("--organ-fixed", ra.organ_fixed, "organ mask in the fixed frame");
    reg->add_option("--tumor-moving", ra.tumor_moving, "tumor mask in the moving frame");
    reg->add_option("--landmarks", ra.landmarks, "landmark csv for the report");
    reg->add_option("--mask-source", ra.mask_source, "none | file:<path> | organ | estimated")
        ->default_str("none");
    reg->add_option("--vp", ra.vp, "on | off")->check(CLI::IsMember({"on", "off"}))
        ->default_str("off");
    reg->add_flag("--skip-prereg", ra.skip_prereg, "estimated mask: skip the pre-registration");
    reg->add_option("--out", ra.out, "output directory")->required();
    reg->add_option("--transform", ra.common.transform, "sigmoid | sin | hard:<t>");
    add_common(reg, ra.common);

    EstimateArgs ea;
    CLI::App* est = app.add_subcommand("estimate-mask", "unsupervised soft tumor mask");
    est->add_option("--moving", ea.moving, "moving image")->required();
    est->add_option("--fixed", ea.fixed, "fixed image")->required();
    est->add_option("--organ-moving", ea.organ_moving, "organ mask in the moving frame")
        ->required();
    est->add_flag("--skip-prereg", ea.skip_prereg, "skip the pre-registration pass");
    est->add_option("--out", ea.out, "output directory")->required();
    est->add_option("--transform", ea.common.transform, "sigmoid | sin | hard:<t>");
    add_common(est, ea.common);

    PipelineArgs pa;
    CLI::App* pipe = app.add_subcommand("pipeline", "mask estimation followed by protected registration");
    pipe->add_option("cases", pa.cases, "phantom case directories")->required();
    pipe->add_flag("--skip-prereg", pa.skip_prereg, "skip the pre-registration pass");
    pipe->add_flag("--compare-regular", pa.compare_regular, "also run and report the unmasked mode");
    pipe->add_option("--jobs", pa.jobs, "process up to N cases concurrently")
        ->check(CLI::PositiveNumber);
    pipe->add_option("--out", pa.out, "output directory")->required();
    add_common(pipe, pa.common);

    SynthArgs sa;
    CLI::App* syn = app.add_subcommand("synth", "generate a synthetic case");
    syn->add_option("scenario", sa.scenario, "vanishing | shrinking | matched")->required();
    syn->add_option("--grid", sa.dims, "grid dimensions, e.g. --grid 64 64 64");
    syn->add_option("--spacing", sa.spacing, "voxel spacing in mm");
    syn->add_option("--seed", sa.seed, "generator seed");
    syn->add_option("--out", sa.out, "case directory")->required();

    WarpArgs wa;
    CLI::App* wrp = app.add_subcommand("warp", "apply a displacement field");
    wrp->add_option("--input", wa.input, "scalar volume or mask")->required();
    wrp->add_option("--field", wa.field, "displacement field")->required();
    wrp->add_option("--out", wa.out, "output volume path")->required();

    MetricsArgs ma;
    CLI::App* met = app.add_subcommand("metrics", "evaluate a registration");
    met->add_option("--field", ma.field, "displacement field")->required();
    met->add_option("--organ-moving", ma.organ_moving, "organ mask, moving frame")->required();
    met->add_option("--organ-fixed", ma.organ_fixed, "organ mask, fixed frame")->required();
    met->add_option("--tumor-moving", ma.tumor_moving, "tumor mask, moving frame")->required();
    met->add_option("--landmarks", ma.landmarks, "landmark csv");
    met->add_option("--out", ma.out, "output directory")->required();
    add_common(met, ma.common);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitUsage;
    }

    try {
        if (reg->parsed()) {
            if (ra.vp == "on" && ra.mask_source == "none") {
                std::fprintf(stderr, "error: --vp on needs a mask source\n");
                return kExitUsage;
            }
            return cmd_register(ra);
        }
        if (est->parsed()) return cmd_estimate_mask(ea);
        if (pipe->parsed()) return cmd_pipeline(pa, argv[0]);
        if (syn->parsed()) return cmd_synth(sa);
        if (wrp->parsed()) return cmd_warp(wa);
        if (met->parsed()) return cmd_metrics(ma);
    } catch (const NumericalError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitNumerical;
    } catch (const ValidationError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitValidation;
    } catch (const Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitValidation;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitValidation;
    }
    return 0;
}
