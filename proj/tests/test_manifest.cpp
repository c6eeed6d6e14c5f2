#include "fdm/manifest.hpp"

#include <catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>

using namespace fdm;

namespace {

std::filesystem::path fresh_dir(const std::string& name) {
    auto d = std::filesystem::temp_directory_path() / ("fdm_manifest_" + name);
    std::filesystem::remove_all(d);
    std::filesystem::create_directories(d);
    return d;
}

void write_file(const std::filesystem::path& p, const std::string& bytes) {
    std::ofstream out(p, std::ios::binary);
    out << bytes;
}

} // namespace

TEST_CASE("sha256 of known inputs") {
    const auto d = fresh_dir("sha");
    write_file(d / "abc", "abc");
    write_file(d / "empty", "");
    CHECK(file_sha256((d / "abc").string()) ==
          "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    CHECK(file_sha256((d / "empty").string()) ==
          "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    CHECK_THROWS_AS(file_sha256((d / "missing").string()), IoError);
}

TEST_CASE("manifest round-trips and verifies") {
    const auto d = fresh_dir("roundtrip");
    write_file(d / "topics.txt", "1 2\n0.5 0.5\n");
    RunManifest m;
    m.subcommand = "train";
    m.config = {{"lr", "0.001"}, {"topics", "1"}};
    m.inputs = {"cooc.bin"};
    m.seed = 42;
    m.started_at = "2026-01-01T00:00:00Z";
    m.wall_clock_seconds = 1.5;
    m.add_output((d / "topics.txt").string());
    const auto path = (d / "manifest.json").string();
    save_manifest(path, m);

    const auto back = load_manifest(path);
    CHECK(back.subcommand == "train");
    CHECK(back.config == m.config);
    CHECK(back.seed == 42);
    REQUIRE(back.outputs.size() == 1);
    CHECK(back.outputs[0].sha256 == m.outputs[0].sha256);
    CHECK(verify_manifest(path).empty());

    write_file(d / "topics.txt", "1 2\n0.25 0.75\n");
    CHECK(verify_manifest(path) == std::vector<std::string>{(d / "topics.txt").string()});
    std::filesystem::remove(d / "topics.txt");
    CHECK(verify_manifest(path).size() == 1);
}

TEST_CASE("relative output paths resolve against the manifest directory") {
    const auto d = fresh_dir("relative");
    write_file(d / "a.txt", "x");
    RunManifest m;
    m.subcommand = "cooc";
    m.outputs.push_back({"a.txt", file_sha256((d / "a.txt").string())});
    save_manifest((d / "manifest.json").string(), m);
    CHECK(verify_manifest((d / "manifest.json").string()).empty());
}

TEST_CASE("malformed manifests") {
    const auto d = fresh_dir("bad");
    write_file(d / "not_json", "{ nope");
    CHECK_THROWS_AS(load_manifest((d / "not_json").string()), FormatError);
    write_file(d / "missing_field", "{\"subcommand\": \"x\"}");
    CHECK_THROWS_AS(load_manifest((d / "missing_field").string()), FormatError);
    CHECK_THROWS_AS(load_manifest((d / "absent").string()), IoError);
}
