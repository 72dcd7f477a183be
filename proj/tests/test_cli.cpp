#include <doctest.h>

#include <fstream>
#include <sstream>

#include <json.hpp>

#include "fixtures.hpp"
#include "support.hpp"
#include "textcav/cli.hpp"
#include "textcav/service.hpp"
#include "workspace_fixture.hpp"

using namespace textcav;
using namespace textcav::testing;
using json = nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct CliRun {
  int code = 0;
  std::string out;
  std::string err;
};

CliRun cli(std::vector<std::string> args) {
  args.insert(args.begin(), "textcav");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::map<std::string, std::string> read_tree(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.is_regular_file()) out[fs::relative(e.path(), root).string()] = slurp(e.path());
  }
  return out;
}

int count_lines_starting_with_rank(const std::string& table) {
  std::istringstream is(table);
  std::string line;
  int rows = 0;
  while (std::getline(is, line)) {
    std::istringstream ls(line);
    int rank;
    if (ls >> rank) ++rows;
  }
  return rows;
}

}  // namespace

TEST_SUITE("cli") {
  TEST_CASE("synth is byte identical for a seed and honours --bias") {
    TempDir dir;
    const std::vector<std::string> args = {"synth", "--seed", "4", "--dims", "16,12", "--samples", "500",
                                           "--bias", "class_1:attr_1"};
    auto a = args, b = args;
    a.insert(a.end(), {"--out-dir", (dir / "a").string()});
    b.insert(b.end(), {"--out-dir", (dir / "b").string()});
    const CliRun ra = cli(a);
    REQUIRE(ra.code == 0);
    CHECK(ra.out.find("(100.0%)") != std::string::npos);
    REQUIRE(cli(b).code == 0);
    CHECK(read_tree(dir / "a") == read_tree(dir / "b"));
    CHECK(fs::exists(dir / "a/heads/biased.fmx"));

    REQUIRE(cli({"synth", "--seed", "4", "--dims", "16", "--out-dir", (dir / "c").string()}).code == 0);
    CHECK_FALSE(fs::exists(dir / "c/heads/biased.fmx"));
    CHECK(cli({"synth", "--bias", "nocolon", "--out-dir", (dir / "d").string()}).code == 1);
    CHECK(cli({"synth", "--bias", "class_0:attr_9", "--out-dir", (dir / "e").string()}).code == 2);
  }

  TEST_CASE("train on a noiseless world reaches a small reconstruction loss") {
    TempDir dir;
    REQUIRE(cli({"synth", "--seed", "7", "--dims", "16,16", "--samples", "2000", "--out-dir", (dir / "w").string()}).code == 0);
    const CliRun r = cli({"train", "--workspace", (dir / "w").string(), "--epochs", "60", "--lr", "3e-3",
                          "--batch-size", "128", "--lambda", "0", "--seed", "1"});
    REQUIRE(r.code == 0);
    CHECK(r.out.find("final: reconstruction") != std::string::npos);
    const json report = json::parse(slurp(dir / "w/maps/map-000001/report.json"));
    CHECK(report.at("epochs").back().at("train").at("reconstruction").get<double>() <= 1e-3);
    CHECK(report.at("config").at("cycle_weight") == 0.0);
  }

  TEST_CASE("zero epochs writes the initialization") {
    TempDir dir;
    make_workspace(dir.path(), "w", {.samples = 200, .bias = false, .with_map = false});
    REQUIRE(cli({"train", "--target-features", (dir / "w/target_image.fmx").string(), "--vl-image-features",
                 (dir / "w/vl_image.fmx").string(), "--epochs", "0", "--seed", "12", "--out", (dir / "m").string()})
                .code == 0);
    const MapCheckpoint cp = load_map_checkpoint(dir / "m");
    const auto [h0, g0] = initial_maps(32, 32, 12);
    CHECK(cp.h == h0);
    CHECK(cp.g == g0);
  }

  TEST_CASE("train errors map to exit codes") {
    TempDir dir;
    const CliRun missing = cli({"train", "--target-features", (dir / "absent.fmx").string(), "--vl-image-features",
                                (dir / "v.fmx").string(), "--out", (dir / "m").string()});
    CHECK(missing.code == 2);
    CHECK(missing.err.find("absent.fmx") != std::string::npos);
    CHECK(cli({"train", "--out", (dir / "m").string()}).code == 1);
    CHECK(cli({"train", "--epochs", "abc"}).code == 1);
    make_workspace(dir.path(), "w", {.samples = 200, .bias = false, .with_map = false});
    CHECK(cli({"train", "--workspace", (dir / "w").string(), "--batch-size", "0"}).code == 2);
  }

  TEST_CASE("rank prints the planted concept first and matches the service bytes") {
    TempDir dir;
    const SyntheticWorld w = make_workspace(dir.path(), "ws");
    const CliRun r = cli({"rank", "--map", (dir / "ws/maps/planted").string(), "--head",
                          (dir / "ws/heads/clean.fmx").string(), "--concepts", (dir / "ws/concepts.jsonl").string(),
                          "--class", "class_2", "--top", "10", "--out", (dir / "r.json").string()});
    REQUIRE(r.code == 0);
    CHECK(count_lines_starting_with_rank(r.out) == 10);
    const json doc = json::parse(slurp(dir / "r.json"));
    CHECK(doc.at("entries")[0].at("text") == w.planted_concept("class_2"));

    ServiceConfig cfg;
    cfg.data_dir = dir.path();
    Service s(cfg);
    s.load_workspaces();
    CHECK(slurp(dir / "r.json") == s.get_ranking("ws", "class_2", "planted", "clean", "10").body);
  }

  TEST_CASE("rank resolves workspace names through TEXTCAV_DATA_DIR") {
    TempDir dir;
    make_workspace(dir.path(), "ws");
    ::setenv("TEXTCAV_DATA_DIR", dir.path().c_str(), 1);
    const CliRun r = cli({"rank", "--workspace", "ws", "--head", "biased", "--class", "class_0", "--top", "3"});
    ::unsetenv("TEXTCAV_DATA_DIR");
    CHECK(r.code == 0);
    CHECK(count_lines_starting_with_rank(r.out) == 3);
  }

  TEST_CASE("rank with an unknown class lists the valid ones") {
    TempDir dir;
    make_workspace(dir.path(), "ws");
    const CliRun r = cli({"rank", "--workspace", (dir / "ws").string(), "--head", "clean", "--class", "zebra"});
    CHECK(r.code == 2);
    CHECK(r.err.find("class_0, class_1, class_2, class_3") != std::string::npos);
    CHECK(cli({"rank", "--workspace", (dir / "ws").string(), "--class", "class_0"}).code == 1);
  }

  TEST_CASE("concepts prep reports removals and is idempotent") {
    TempDir dir;
    ConceptList l;
    const std::vector<std::string> names = {"an", "horse", "horses", "old wooden fence", "meadow"};
    for (std::size_t i = 0; i < names.size(); ++i) {
      Vector e = Vector::Zero(5);
      e(static_cast<Eigen::Index>(i)) = 1;
      l.entries.push_back({names[i], e, std::nullopt});
    }
    save_concepts(l, dir / "in.jsonl");
    const CliRun r = cli({"concepts", "prep", "--in", (dir / "in.jsonl").string(), "--out", (dir / "out.jsonl").string()});
    REQUIRE(r.code == 0);
    CHECK(r.out.find("articles removed:        1") != std::string::npos);
    CHECK(r.out.find("plurals removed:         1") != std::string::npos);
    CHECK(r.out.find("long phrases removed:    1") != std::string::npos);
    CHECK(load_concepts(dir / "out.jsonl").size() == 2);

    const CliRun again = cli({"concepts", "prep", "--in", (dir / "out.jsonl").string(), "--out", (dir / "out2.jsonl").string()});
    CHECK(again.out.find("kept 2 of 2") != std::string::npos);
    CHECK(slurp(dir / "out.jsonl") == slurp(dir / "out2.jsonl"));

    save_concepts(twelve_concepts(), dir / "twelve.jsonl");
    const CliRun loose = cli({"concepts", "prep", "--in", (dir / "twelve.jsonl").string(), "--out",
                              (dir / "t.jsonl").string(), "--dedup-threshold", "1.0"});
    CHECK(loose.out.find("near-duplicates removed: 0") != std::string::npos);
  }

  TEST_CASE("crs and compare on annotation fixtures") {
    TempDir dir;
    const auto two = annotated_ranking("atelectasis", "biased", 50, 2, 0);
    write_file_locked(dir / "r.json", ranking_document(two.ranking));
    save_annotations(two.annotations, dir / "a.jsonl");
    const CliRun r = cli({"crs", "--ranking", (dir / "r.json").string(), "--annotations", (dir / "a.jsonl").string()});
    REQUIRE(r.code == 0);
    CHECK(r.out.find(": 0.04 (2/50)") != std::string::npos);

    AnnotationSet partial;
    for (const auto& [key, a] : two.annotations.records()) {
      if (a.text != "biased concept 17") partial.add(a);
    }
    save_annotations(partial, dir / "partial.jsonl");
    const CliRun inc = cli({"crs", "--ranking", (dir / "r.json").string(), "--annotations", (dir / "partial.jsonl").string()});
    CHECK(inc.code == 2);
    CHECK(inc.err.find("biased concept 17") != std::string::npos);

    const auto clean = annotated_ranking("k", "clean", 50, 20, 13);
    const auto biased = annotated_ranking("k", "biased", 50, 4, 44);
    AnnotationSet both = clean.annotations;
    for (const auto& [key, a] : biased.annotations.records()) both.add(a);
    write_file_locked(dir / "clean.json", ranking_document(clean.ranking));
    write_file_locked(dir / "biased.json", ranking_document(biased.ranking));
    save_annotations(both, dir / "both.jsonl");
    const CliRun c = cli({"compare", "--a", (dir / "clean.json").string(), "--b", (dir / "biased.json").string(),
                          "--annotations", (dir / "both.jsonl").string(), "--category", "proxy"});
    REQUIRE(c.code == 0);
    CHECK(c.out.find("proxy: 13/50 vs 44/50") != std::string::npos);
    CHECK(c.out.find("CRS: 0.4 vs 0.08") != std::string::npos);
  }

  TEST_CASE("usage errors exit with 1 and help exits with 0") {
    CHECK(cli({}).code == 1);
    CHECK(cli({"frobnicate"}).code == 1);
    CHECK(cli({"--help"}).code == 0);
    CHECK(cli({"rank", "--top", "5"}).code == 1);
  }
}
