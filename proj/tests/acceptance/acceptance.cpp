// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
// failure. Every expected value is computed here by an independent oracle
// or fixed by a hand-built fixture.

#include <atomic>
#include <chrono>
#include <cstdio>
#include <cstring>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "fixtures.hpp"
#include "oracles.hpp"
#include "support.hpp"
#include "textcav/cli.hpp"
#include "textcav/service.hpp"
#include "workspace_fixture.hpp"

// After Eigen: httplib pulls in <resolv.h>, whose `_res` macro collides
// with parameter names inside Eigen.
#include <httplib.h>

using namespace textcav;
using namespace textcav::testing;
using json = nlohmann::json;
using Clock = std::chrono::steady_clock;
namespace fs = std::filesystem;

namespace {

int failures = 0;

void report(int id, const std::string& name, bool ok, const std::string& detail) {
  std::cout << (ok ? "PASS" : "FAIL") << "  criterion " << id << " " << name << ": " << detail << std::endl;
  if (!ok) ++failures;
}

std::string fmt(const char* spec, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

// Training settings for the 32-dimensional recovery worlds.
TrainingConfig recovery_config(std::uint64_t seed) {
  TrainingConfig cfg;
  cfg.epochs = 60;
  cfg.batch_size = 128;
  cfg.learning_rate = 3e-3;
  cfg.cycle_weight = 1.0;
  cfg.seed = seed;
  return cfg;
}

AffineMap train_h(const SyntheticWorld& w, std::uint64_t seed) {
  return train_maps({w.target_image.features, w.vl_image.features, w.vl_text.features}, recovery_config(seed)).h;
}

void criterion1() {
  const auto t0 = Clock::now();
  const SyntheticWorld w = gen_world(101, 16, 16, 4, 4096, 0.01);
  TrainingConfig cfg;
  cfg.epochs = 200;
  cfg.batch_size = 256;
  cfg.learning_rate = 1e-3;
  cfg.cycle_weight = 0.0;
  cfg.seed = 7;
  const TrainResult r = train_maps({w.target_image.features, w.vl_image.features, Matrix(0, 16)}, cfg);
  const double runtime = seconds_since(t0);

  // The trainer fits on every row except the trailing held-out tenth.
  const Eigen::Index n_train = w.vl_image.count() - heldout_count_for(w.vl_image.count());
  const Matrix psi = w.vl_image.features.topRows(n_train);
  const Matrix phi = w.target_image.features.topRows(n_train);
  const AffineMap h_ols = ols_fit(psi, phi);
  const AffineMap g_ols = ols_fit(phi, psi);
  const double oracle_gap = std::max(relative_affine_error(h_ols, qr_affine_fit(psi, phi)),
                                     relative_affine_error(g_ols, qr_affine_fit(phi, psi)));
  const double err_h = relative_affine_error(r.h, h_ols);
  const double err_g = relative_affine_error(r.g, g_ols);
  const bool ok = err_h <= 0.01 && err_g <= 0.01 && runtime < 60.0 && oracle_gap <= 1e-4;
  report(1, "OLS equivalence", ok,
         "rel Frobenius h " + fmt("%.3g", err_h) + ", g " + fmt("%.3g", err_g) + " (tol 0.01); ols_fit vs QR " +
             fmt("%.2g", oracle_gap) + " (tol 1e-4); runtime " + fmt("%.1f", runtime) + " s (tol 60 s)");
}

void criterion2() {
  double worst_loss = 0.0;
  const Matrix target = gaussian(24, 6, 201), vl = unit_rows(gaussian(24, 5, 202)), text = unit_rows(gaussian(10, 5, 203));
  for (int p = 0; p < 10; ++p) {
    const AffineMap h = random_map(6, 5, 300 + p), g = random_map(5, 6, 400 + p);
    for (bool squared : {false, true}) {
      worst_loss = std::max(worst_loss, loss_gradient_relative_error(h, g, {target, vl, &text}, {1.0, squared}));
    }
  }
  double worst_head = 0.0;
  for (int p = 0; p < 10; ++p) {
    ClassifierHead head;
    head.weights = gaussian(4, 8, 500 + p);
    head.bias = gaussian(4, 1, 600 + p).col(0);
    head.class_names = {"a", "b", "c", "d"};
    const Vector at = gaussian(8, 1, 700 + p).col(0);
    for (Eigen::Index k = 0; k < 4; ++k) worst_head = std::max(worst_head, head_gradient_relative_error(head, k, at));
  }
  report(2, "gradient correctness", worst_loss <= 1e-2 && worst_head <= 1e-4,
         "loss gradients worst rel err " + fmt("%.2g", worst_loss) + " over 10 points (tol 1e-2); head gradient " +
             fmt("%.2g", worst_head) + " (tol 1e-4)");
}

void criterion3() {
  int hits = 0, trials = 0, random_hits = 0;
  for (std::uint64_t s = 0; s < 20; ++s) {
    const SyntheticWorld w = gen_world(1000 + s, 32, 32, 4, 2000, 0.0);
    const AffineMap h = train_h(w, s);
    const RecoveryReport clean = evaluate_head_recovery(w, w.clean_head, h);
    const RecoveryReport rnd = evaluate_head_recovery(w, random_head(5000 + s, 4, 32, w.class_names), h);
    for (const auto& c : clean.classes) hits += c.hit();
    for (const auto& c : rnd.classes) random_hits += c.hit();
    trials += static_cast<int>(clean.classes.size());
  }
  const double rate = double(hits) / trials;
  const auto [lo, hi] = binomial_interval95(trials, 1.0 / 64.0);
  const bool ok = rate >= 0.95 && random_hits >= lo && random_hits <= hi;
  report(3, "planted-concept recovery", ok,
         "clean head top-1 " + std::to_string(hits) + "/" + std::to_string(trials) + " = " + fmt("%.3f", rate) +
             " (tol >= 0.95); random head " + std::to_string(random_hits) + "/" + std::to_string(trials) +
             " (95% binomial interval at p=1/64: [" + std::to_string(lo) + ", " + std::to_string(hi) + "])");
}

void criterion4() {
  int passing = 0, dominated = 0;
  for (std::uint64_t s = 0; s < 20; ++s) {
    const SyntheticWorld w = inject_bias(gen_world(2000 + s, 32, 32, 4, 2000, 0.0), {"class_0", "attr_0"});
    const RecoveryReport r = evaluate_recovery(w, train_h(w, s), 10);
    const BiasRecovery& b = *r.bias;
    if (b.proxy_rank_biased <= 3 && b.proxy_rank_clean > 10) {
      ++passing;
      if (b.proxy_category_count_biased > b.proxy_category_count_clean) ++dominated;
    }
  }
  const bool ok = passing >= 18 && dominated == passing;
  report(4, "bias-detection reproduction", ok,
         "proxy in biased top-3 and below clean top-10 in " + std::to_string(passing) +
             "/20 seeds (tol >= 18); proxy-category count larger on biased side in " + std::to_string(dominated) +
             "/" + std::to_string(passing) + " passing seeds (tol all)");
}

void criterion5() {
  const auto two = annotated_ranking("atelectasis", "biased", 50, 2, 0);
  const auto all = annotated_ranking("pleural effusion", "clean", 50, 50, 0);
  const double a = crs_score(two.annotations, two.ranking, 50);
  const double b = crs_score(all.annotations, all.ranking, 50);

  TempDir dir;
  write_file_locked(dir / "r.json", ranking_document(two.ranking));
  save_annotations(two.annotations, dir / "a.jsonl");
  const std::string r = (dir / "r.json").string(), an = (dir / "a.jsonl").string();
  const char* argv[] = {"textcav", "crs", "--ranking", r.c_str(), "--annotations", an.c_str()};
  std::ostringstream out, err;
  const int code = run_cli(6, argv, out, err);
  const bool cli_ok = code == 0 && out.str().find(": 0.04 (2/50)") != std::string::npos;
  report(5, "CRS exactness", a == 0.04 && b == 1.0 && cli_ok,
         "2 of 50 -> " + fmt("%.17g", a) + " (expect 0.04 exactly); 50 of 50 -> " + fmt("%.17g", b) +
             " (expect 1); CLI prints 0.04: " + (cli_ok ? "yes" : "no"));
}

void criterion6() {
  const ConceptList in = twelve_concepts();
  const ConceptList once = dedup_concepts(filter_concepts(in), 0.9);
  std::vector<std::string> got;
  for (const auto& e : once.entries) got.push_back(e.text);
  const bool survivors_ok = got == twelve_concepts_survivors();

  FilterStats stats;
  std::size_t removed = 0;
  const ConceptList twice = dedup_concepts(filter_concepts(once, &stats), 0.9, &removed);
  const bool idempotent = twice.size() == once.size() && stats.articles + stats.plurals + stats.too_long + removed == 0;

  double worst = -1.0;
  for (std::size_t i = 0; i < once.size(); ++i) {
    for (std::size_t j = i + 1; j < once.size(); ++j) {
      double s = 0;
      const Vector& a = *once.entries[i].embedding;
      const Vector& b = *once.entries[j].embedding;
      for (Eigen::Index d = 0; d < a.size(); ++d) s += double(a(d)) * b(d);
      worst = std::max(worst, s);
    }
  }
  std::string list;
  for (const auto& t : got) list += (list.empty() ? "" : ", ") + t;
  report(6, "concept-pipeline conformance", survivors_ok && idempotent && worst <= 0.9,
         "survivors {" + list + "} " + (survivors_ok ? "match" : "differ from") + " the hand list; idempotent: " +
             (idempotent ? "yes" : "no") + "; max pairwise cosine " + fmt("%.3g", worst) + " (tol 0.9)");
}

void criterion7() {
  const SyntheticWorld w = inject_bias(gen_world(3001, 32, 32, 4, 2000, 0.0), {"class_0", "attr_0"});
  const TrainingData data{w.target_image.features, w.vl_image.features, w.vl_text.features};
  TrainingConfig cfg = recovery_config(11);
  cfg.epochs = 10;
  const TrainResult r1 = train_maps(data, cfg);
  const TrainResult r2 = train_maps(data, cfg);
  const ClassifierHead& head = *w.biased_head;

  auto doc = [&](const AffineMap& h, const ClassifierHead& hd) {
    SensitivityRanking r = rank_concepts(hd, 0, w.bank, h, w.bank.size());
    r.map_id = "m";
    r.head_id = "h";
    return ranking_document(r);
  };
  const std::string base = doc(r1.h, head);
  const bool deterministic = base == doc(r2.h, head);

  bool pow2_exact = true;
  double max_dev = 0.0;
  bool order_kept = true;
  const SensitivityRanking ref = rank_concepts(head, 0, w.bank, r1.h, w.bank.size());
  for (float alpha : {0.125f, 2.0f, 64.0f, 0.3f, 3.0f, 41.7f}) {
    AffineMap scaled = r1.h;
    scaled.weights *= alpha;
    scaled.bias *= alpha;
    const SensitivityRanking sr = rank_concepts(head, 0, w.bank, scaled, w.bank.size());
    const bool pow2 = alpha == 0.125f || alpha == 2.0f || alpha == 64.0f;
    if (pow2 && !(sr == ref)) pow2_exact = false;
    for (std::size_t i = 0; i < sr.entries.size(); ++i) {
      if (sr.entries[i].text != ref.entries[i].text) order_kept = false;
      max_dev = std::max(max_dev, std::abs(sr.entries[i].score - ref.entries[i].score));
    }
  }
  ClassifierHead shifted = head;
  shifted.bias.setConstant(123.0f);
  shifted.bias(0) = -1e5f;
  const bool bias_free = doc(r1.h, shifted) == base;

  const bool ok = deterministic && pow2_exact && order_kept && max_dev <= 1e-6 && bias_free;
  report(7, "ranking invariances", ok,
         std::string("power-of-two scaling bit identical: ") + (pow2_exact ? "yes" : "no") +
             "; other scalings keep order: " + (order_kept ? "yes" : "no") + ", max score change " +
             fmt("%.2g", max_dev) + " (tol 1e-6); logit bias changes scores: " + (bias_free ? "no" : "yes") +
             "; equal-seed runs byte identical: " + (deterministic ? "yes" : "no"));
}

bool fmx_jsonl_round_trip(std::string& detail) {
  TempDir dir;
  bool ok = true;
  for (int t = 0; t < 20; ++t) {
    Matrix m = gaussian(1 + t * 7, 1 + (t * 5) % 33, 800 + t, std::pow(10.0, t % 7 - 3));
    m(0, 0) = t % 2 ? -0.0f : std::numeric_limits<float>::denorm_min();
    write_fmx(m, dir / "m.fmx");
    const Matrix back = read_fmx(dir / "m.fmx");
    ok &= back.rows() == m.rows() && back.cols() == m.cols() &&
          std::memcmp(back.data(), m.data(), sizeof(float) * std::size_t(m.size())) == 0;
  }
  const SyntheticWorld w = gen_world(9, 16, 16, 4, 100, 0.0);
  save_concepts(w.bank, dir / "c.jsonl");
  const ConceptList cback = load_concepts(dir / "c.jsonl");
  for (std::size_t i = 0; i < w.bank.size(); ++i) {
    ok &= cback.entries[i].text == w.bank.entries[i].text &&
          std::memcmp(cback.entries[i].embedding->data(), w.bank.entries[i].embedding->data(), 16 * sizeof(float)) == 0;
  }
  const AnnotationSet ann = world_annotations(w);
  save_annotations(ann, dir / "a.jsonl");
  ok &= load_annotations(dir / "a.jsonl") == ann;
  detail = std::string("FMX/JSONL round trips bit exact: ") + (ok ? "yes" : "no");
  return ok;
}

bool cli_matches_service(std::string& detail) {
  TempDir dir;
  make_workspace(dir.path(), "ws");
  const std::string root = (dir / "ws").string(), out = (dir / "r.json").string();
  const char* argv[] = {"textcav", "rank", "--workspace", root.c_str(), "--map", "planted", "--head", "biased",
                        "--class", "class_0", "--top", "20", "--out", out.c_str()};
  std::ostringstream o, e;
  const int code = run_cli(14, argv, o, e);
  ServiceConfig cfg;
  cfg.data_dir = dir.path();
  Service s(cfg);
  s.load_workspaces();
  const std::string body = s.get_ranking("ws", "class_0", "planted", "biased", "20").body;
  const bool ok = code == 0 && read_file_locked(out) == body;
  detail = std::string("CLI and service ranking JSON byte identical: ") + (ok ? "yes" : "no");
  return ok;
}

bool snapshot_stress(std::string& detail) {
  TempDir dir;
  make_workspace(dir.path(), "ws", {.seed = 31, .samples = 4000});
  fs::rename(dir / "ws/maps/planted", dir / "ws/maps/map-000000");

  ServiceConfig cfg;
  cfg.port = 0;
  cfg.data_dir = dir.path();
  Service s(cfg);
  s.load_workspaces();
  const std::string old_body = s.get_ranking("ws", "class_0", "", "biased", "10").body;
  const int port = s.bind("127.0.0.1");
  std::thread server([&] { s.serve(); });

  const json started = json::parse(s.start_training("ws", R"({"epochs":30,"batch_size":32,"seed":3})").body);
  const std::string job = started.at("job_id");
  std::atomic<bool> finished{false};
  std::atomic<int> reads{0}, saw_old{0}, saw_new{0}, bad{0}, errors{0};
  std::vector<std::string> observed(100);
  std::vector<std::thread> readers;
  for (int t = 0; t < 100; ++t) {
    readers.emplace_back([&, t] {
      httplib::Client cli("127.0.0.1", port);
      std::set<std::string> mine;
      do {
        auto res = cli.Get("/v1/workspaces/ws/rankings?class=class_0&head=biased&top=10");
        auto ws = cli.Get("/v1/workspaces/ws");
        if (!res || !ws || res->status != 200 || ws->status != 200) {
          ++errors;
          continue;
        }
        ++reads;
        const auto maps = json::parse(ws->body).at("maps");
        if (maps != json{"map-000000"} && maps != json{"map-000000", "map-000001"}) ++bad;
        mine.insert(res->body);
      } while (!finished.load());
      std::string joined;
      for (const auto& b : mine) joined += b + '\x1f';
      observed[std::size_t(t)] = joined;
    });
  }
  s.wait_for_jobs();
  finished = true;
  for (auto& r : readers) r.join();
  const std::string new_body = s.get_ranking("ws", "class_0", "", "biased", "10").body;
  const bool job_done = json::parse(s.get_job(job).body).at("status") == "done";
  s.stop();
  server.join();

  for (const auto& joined : observed) {
    std::size_t pos = 0;
    while (pos < joined.size()) {
      const auto end = joined.find('\x1f', pos);
      const std::string body = joined.substr(pos, end - pos);
      if (body == old_body) ++saw_old;
      else if (body == new_body) ++saw_new;
      else ++bad;
      pos = end + 1;
    }
  }
  const bool ok = job_done && bad == 0 && errors == 0 && saw_old > 0 && new_body != old_body;
  detail = "100 readers, " + std::to_string(reads.load()) + " reads during retrain: " + std::to_string(bad.load()) +
           " neither old nor new, " + std::to_string(errors.load()) + " errors; old seen by " +
           std::to_string(saw_old.load()) + ", new by " + std::to_string(saw_new.load()) + " readers";
  return ok;
}

void criterion8() {
  std::string a, b, c;
  const bool ok1 = fmx_jsonl_round_trip(a);
  const bool ok2 = cli_matches_service(b);
  const bool ok3 = snapshot_stress(c);
  report(8, "format/API stability", ok1 && ok2 && ok3, a + "; " + b + "; " + c);
}

}  // namespace

int main() {
  const auto t0 = Clock::now();
  const std::vector<void (*)()> criteria = {criterion1, criterion2, criterion3, criterion4,
                                            criterion5, criterion6, criterion7, criterion8};
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    try {
      criteria[i]();
    } catch (const std::exception& e) {
      report(static_cast<int>(i + 1), "(exception)", false, e.what());
    }
  }
  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed") << " in "
            << fmt("%.1f", seconds_since(t0)) << " s" << std::endl;
  return failures == 0 ? 0 : 1;
}
