#include <catch2/catch_amalgamated.hpp>
#include <volreg/volreg.hpp>

#include <filesystem>
#include <fstream>
#include <unistd.h>

using namespace volreg;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() /
               ("volreg_io_" + std::to_string(::getpid()) + "_" +
                std::to_string(reinterpret_cast<std::uintptr_t>(this)));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

ScalarVolume random_volume(const GridInfo& g, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<double> v(g.voxel_count());
    for (double& x : v) x = rng.uniform(-2.0, 2.0);
    return ScalarVolume(g, std::move(v));
}

} // namespace

TEST_CASE("scalar volume round trip keeps f32 precision") {
    TempDir tmp;
    GridInfo g({5, 4, 3}, {1.0, 0.5, 2.0});
    ScalarVolume v = random_volume(g, 1);
    fs::path p = tmp.path / "vol.vpv.json";
    io::write_volume(v, p);
    ScalarVolume back = io::read_scalar_volume(p);
    REQUIRE(back.grid() == g);
    for (std::size_t i = 0; i < v.values().size(); ++i)
        CHECK(back.values()[i] == Catch::Approx(v.values()[i]).margin(1e-6));
}

TEST_CASE("header carries grid and format metadata") {
    TempDir tmp;
    GridInfo g({5, 4, 3}, {1.0, 0.5, 2.0});
    fs::path p = tmp.path / "vol.vpv.json";
    io::write_volume(ScalarVolume::constant(g, 1.0), p);

    io::VolumeHeader h = io::read_header(p);
    CHECK(h.dims == std::array<int, 3>{5, 4, 3});
    CHECK(h.spacing_mm == std::array<double, 3>{1.0, 0.5, 2.0});
    CHECK(h.dtype == "f32");
    CHECK(h.channels == 1);
    CHECK(fs::exists(h.raw_path));

    std::ifstream f(p);
    nlohmann::json j = nlohmann::json::parse(f);
    for (const char* key : {"dims", "spacing_mm", "dtype", "channels", "layout", "order",
                            "endian", "data"})
        CHECK(j.contains(key));
    CHECK(j["layout"] == "planar");
    CHECK(j["order"] == "x-fastest");
    CHECK(j["endian"] == "little");
}

TEST_CASE("mask and field round trips") {
    TempDir tmp;
    GridInfo g({4, 4, 4}, {1, 1, 1});
    Rng rng(2);

    std::vector<std::uint8_t> bits(g.voxel_count());
    for (auto& b : bits) b = rng.next_below(2) ? 1 : 0;
    BinaryMask m(g, bits);
    io::write_volume(m, tmp.path / "mask.vpv.json");
    CHECK(io::read_binary_mask(tmp.path / "mask.vpv.json").values() == m.values());

    std::vector<double> soft(g.voxel_count());
    for (double& x : soft) x = rng.next_double();
    SoftMask sm(g, soft);
    io::write_volume(sm, tmp.path / "soft.vpv.json");
    SoftMask sm2 = io::read_soft_mask(tmp.path / "soft.vpv.json");
    for (std::size_t i = 0; i < soft.size(); ++i)
        CHECK(sm2.values()[i] == Catch::Approx(sm.values()[i]).margin(1e-7));

    std::vector<double> u(3 * g.voxel_count());
    for (double& x : u) x = rng.uniform(-3.0, 3.0);
    DisplacementField f(g, u);
    io::write_volume(f, tmp.path / "field.vpv.json");
    DisplacementField f2 = io::read_displacement_field(tmp.path / "field.vpv.json");
    for (std::size_t i = 0; i < u.size(); ++i)
        CHECK(f2.data()[i] == Catch::Approx(f.data()[i]).margin(1e-6));
}

TEST_CASE("reader rejects malformed payloads") {
    TempDir tmp;
    GridInfo g({4, 4, 4}, {1, 1, 1});
    fs::path p = tmp.path / "vol.vpv.json";
    io::write_volume(ScalarVolume::constant(g, 1.0), p);

    SECTION("missing file") {
        CHECK_THROWS_AS(io::read_scalar_volume(tmp.path / "nope.vpv.json"), IoError);
    }
    SECTION("truncated raw") {
        fs::resize_file(tmp.path / "vol.raw", 10);
        CHECK_THROWS_AS(io::read_scalar_volume(p), IoError);
    }
    SECTION("non-finite f32") {
        std::fstream f(tmp.path / "vol.raw", std::ios::in | std::ios::out | std::ios::binary);
        float nanv = std::numeric_limits<float>::quiet_NaN();
        f.write(reinterpret_cast<const char*>(&nanv), 4);
        f.close();
        CHECK_THROWS_AS(io::read_scalar_volume(p), IoError);
    }
    SECTION("wrong kind") {
        CHECK_THROWS_AS(io::read_binary_mask(p), IoError);
    }
    SECTION("invalid header json") {
        std::ofstream f(p, std::ios::trunc);
        f << "{not json";
        f.close();
        CHECK_THROWS_AS(io::read_scalar_volume(p), IoError);
    }
    SECTION("missing header key") {
        std::ifstream in(p);
        nlohmann::json j = nlohmann::json::parse(in);
        in.close();
        j.erase("dims");
        std::ofstream out(p, std::ios::trunc);
        out << j.dump();
        out.close();
        CHECK_THROWS_AS(io::read_scalar_volume(p), IoError);
    }
}

TEST_CASE("binary mask payload must be 0/1 and soft mask in range") {
    TempDir tmp;
    GridInfo g({4, 4, 4}, {1, 1, 1});
    io::write_volume(BinaryMask::empty(g), tmp.path / "m.vpv.json");
    {
        std::fstream f(tmp.path / "m.raw", std::ios::in | std::ios::out | std::ios::binary);
        char two = 2;
        f.write(&two, 1);
    }
    CHECK_THROWS_AS(io::read_binary_mask(tmp.path / "m.vpv.json"), IoError);

    io::write_volume(ScalarVolume::constant(g, 1.5), tmp.path / "s.vpv.json");
    CHECK_THROWS_AS(io::read_soft_mask(tmp.path / "s.vpv.json"), IoError);
    CHECK_NOTHROW(io::read_scalar_volume(tmp.path / "s.vpv.json"));
}

TEST_CASE("landmark csv round trip and validation") {
    TempDir tmp;
    GridInfo g({16, 16, 16}, {1, 1, 1});
    std::vector<Landmark> entries = {
        {"p0", LandmarkSpace::fixed, {1.25, 2.5, 3.75}},
        {"p0", LandmarkSpace::moving, {2.0, 3.0, 4.0}},
        {"p1", LandmarkSpace::fixed, {10, 11, 12}},
        {"p1", LandmarkSpace::moving, {9.5, 10.5, 11.5}},
    };
    LandmarkSet lms(entries, g);
    fs::path p = tmp.path / "lms.csv";
    io::write_landmarks(lms, p);
    LandmarkSet back = io::read_landmarks(p, g);
    REQUIRE(back.size() == 2);
    CHECK(back.pairs()[0].fixed_pos == std::array<double, 3>{1.25, 2.5, 3.75});
    CHECK(back.pairs()[1].moving_pos == std::array<double, 3>{9.5, 10.5, 11.5});

    auto write_text = [&](const std::string& s) {
        std::ofstream f(p, std::ios::trunc);
        f << s;
    };
    write_text("x,y,z\n");
    CHECK_THROWS_AS(io::read_landmarks(p, g), IoError);
    write_text("id,space,x,y,z\na,fixed,1,2\n");
    CHECK_THROWS_AS(io::read_landmarks(p, g), IoError);
    write_text("id,space,x,y,z\na,nowhere,1,2,3\n");
    CHECK_THROWS_AS(io::read_landmarks(p, g), IoError);
    write_text("id,space,x,y,z\na,fixed,1,2,bogus\n");
    CHECK_THROWS_AS(io::read_landmarks(p, g), IoError);
}

TEST_CASE("config json round trip") {
    RegistrationConfig c;
    c.alpha_vp = 20.0;
    c.alpha_reg = 1.0;
    c.pyramid_levels = 2;
    c.iterations_per_level = {50, 25};
    c.transform = MaskTransform::hard(2.0);
    c.seed = 99;
    nlohmann::json j = io::config_to_json(c);
    RegistrationConfig back = io::config_from_json(j);
    CHECK(back.alpha_vp == 20.0);
    CHECK(back.alpha_reg == 1.0);
    CHECK(back.iterations_per_level == std::vector<int>{50, 25});
    CHECK(back.transform.kind == MaskTransformKind::hard);
    CHECK(back.transform.hard_threshold == 2.0);
    CHECK(back.seed == 99);

    CHECK_THROWS_AS(io::config_from_json({{"voodoo", 3}}), ValidationError);
    CHECK_THROWS_AS(io::config_from_json({{"alpha_vp", "high"}}), ValidationError);
    CHECK_THROWS_AS(io::config_from_json(nlohmann::json::array()), ValidationError);
    // partial config keeps defaults for the rest
    RegistrationConfig partial = io::config_from_json({{"alpha_vp", 5.0}});
    CHECK(partial.alpha_vp == 5.0);
    CHECK(partial.pyramid_levels == 3);
}

TEST_CASE("phantom case directory round trip") {
    TempDir tmp;
    PhantomCase pc = generate_phantom(Scenario::matched_tumor, GridInfo({32, 32, 32}, {1, 1, 1}), 5);
    io::write_case(pc, tmp.path / "case");
    io::CaseOnDisk back = io::read_case(tmp.path / "case");
    CHECK(back.scenario == Scenario::matched_tumor);
    CHECK(back.moving.grid() == pc.moving.grid());
    CHECK(back.organ_moving.values() == pc.organ_moving.values());
    CHECK(back.tumor_fixed.values() == pc.tumor_fixed.values());
    CHECK(back.landmarks.size() == pc.landmarks.size());
    for (std::size_t i = 0; i < pc.moving.values().size(); ++i)
        CHECK(back.moving.values()[i] == Catch::Approx(pc.moving.values()[i]).margin(1e-6));
    for (std::size_t i = 0; i < pc.gt_field.data().size(); ++i)
        CHECK(back.gt_field.data()[i] == Catch::Approx(pc.gt_field.data()[i]).margin(1e-5));
}
