#include "textcav/cli.hpp"

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "textcav/cav_engine.hpp"
#include "textcav/concept_pipeline.hpp"
#include "textcav/reports.hpp"
#include "textcav/service.hpp"
#include "textcav/synthetic.hpp"
#include "textcav/workspace.hpp"

namespace textcav {
namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

std::string fmt(const char* spec, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

// A workspace argument is a directory path, or a name under TEXTCAV_DATA_DIR.
fs::path resolve_workspace(const std::string& arg) {
  if (fs::is_directory(arg)) return arg;
  if (const char* dir = std::getenv("TEXTCAV_DATA_DIR")) {
    const fs::path candidate = fs::path(dir) / arg;
    if (fs::is_directory(candidate)) return candidate;
  }
  throw NotFoundError("workspace not found: " + arg);
}

std::vector<std::string> map_ids(const fs::path& maps_dir) {
  std::vector<std::string> ids;
  if (!fs::is_directory(maps_dir)) return ids;
  for (const auto& e : fs::directory_iterator(maps_dir)) {
    const std::string name = e.path().filename().string();
    if (e.is_directory() && !name.empty() && name[0] != '.') ids.push_back(name);
  }
  std::sort(ids.begin(), ids.end());
  return ids;
}

std::string next_map_id(const WorkspaceLayout& layout) {
  for (int n = 1;; ++n) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "map-%06d", n);
    if (!fs::exists(layout.map(buf))) return buf;
  }
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  write_file_locked(path, text);
}

SensitivityRanking read_ranking(const fs::path& path) {
  if (!fs::exists(path)) throw NotFoundError("ranking file not found: " + path.string());
  try {
    return ranking_from_json(json::parse(read_file_locked(path)));
  } catch (const json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

SensitivityRanking truncated(SensitivityRanking r, std::size_t top) {
  if (r.entries.size() < top) {
    throw PreconditionError(r.class_name + " ranking has " + std::to_string(r.entries.size()) +
                            " entries, fewer than top=" + std::to_string(top));
  }
  r.entries.resize(top);
  return r;
}

void print_ranking(std::ostream& out, const SensitivityRanking& r) {
  out << "class " << r.class_name << "  map " << r.map_id << "  head " << r.head_id << "\n";
  out << "rank  score         concept\n";
  for (std::size_t i = 0; i < r.entries.size(); ++i) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%4zu  %-12s  ", i + 1, fmt("%.6f", r.entries[i].score).c_str());
    out << buf << r.entries[i].text << "\n";
  }
}

struct TrainArgs {
  std::string workspace;
  std::string target, vl_image, vl_text, out, config;
  TrainingConfig cfg;
};

void run_train(const TrainArgs& a, std::ostream& out) {
  TrainingConfig cfg = a.cfg;
  if (!a.config.empty()) {
    if (!fs::exists(a.config)) throw NotFoundError("config file not found: " + a.config);
    cfg = training_config_from_json(json::parse(read_file_locked(a.config)));
  }
  cfg.validate();

  fs::path target = a.target, vl_image = a.vl_image, vl_text = a.vl_text, dest = a.out;
  if (!a.workspace.empty()) {
    const WorkspaceLayout layout{resolve_workspace(a.workspace)};
    if (target.empty()) target = layout.target_image();
    if (vl_image.empty()) vl_image = layout.vl_image();
    if (vl_text.empty() && fs::exists(layout.vl_text())) vl_text = layout.vl_text();
    if (dest.empty()) dest = layout.map(next_map_id(layout));
  }
  if (target.empty() || vl_image.empty()) {
    throw Error(ErrorKind::usage, "train needs --target-features and --vl-image-features (or --workspace)");
  }
  if (dest.empty()) throw Error(ErrorKind::usage, "train needs --out (or --workspace)");

  const FeatureSet t = load_feature_set(target);
  const FeatureSet v = load_feature_set(vl_image);
  std::optional<FeatureSet> vt;
  if (!vl_text.empty()) vt = load_feature_set(vl_text);

  const TrainResult result = train_maps(t, v, vt ? &*vt : nullptr, cfg);
  json report = to_json(result.report);
  report["config"] = to_json(cfg);
  save_map_checkpoint(dest, result.h, result.g, report);

  out << "epoch  reconstruction  cycle         total         heldout_total\n";
  for (const auto& e : result.report.epochs) {
    char buf[128];
    std::snprintf(buf, sizeof buf, "%5d  %-14s  %-12s  %-12s  %s\n", e.epoch,
                  fmt("%.6g", e.train.reconstruction).c_str(), fmt("%.6g", e.train.cycle()).c_str(),
                  fmt("%.6g", e.train.total(cfg.cycle_weight)).c_str(),
                  e.heldout ? fmt("%.6g", e.heldout->total(cfg.cycle_weight)).c_str() : "-");
    out << buf;
  }
  if (cfg.epochs == 0) out << "no epochs run; wrote the initial maps\n";
  if (!result.report.epochs.empty()) {
    const auto& last = result.report.epochs.back().train;
    out << "final: reconstruction " << fmt("%.9g", last.reconstruction) << ", cycle "
        << fmt("%.9g", last.cycle()) << ", total " << fmt("%.9g", last.total(cfg.cycle_weight))
        << "\n";
  }
  out << "wrote " << dest.string() << "\n";
}

struct RankArgs {
  std::string workspace, map, head, concepts, class_name, out;
  std::size_t top = 10;
};

void run_rank(const RankArgs& a, std::ostream& out) {
  fs::path map = a.map, head = a.head, concepts = a.concepts;
  if (!a.workspace.empty()) {
    const WorkspaceLayout layout{resolve_workspace(a.workspace)};
    if (map.empty()) {
      const auto ids = map_ids(layout.maps_dir());
      if (ids.empty()) throw PreconditionError("workspace has no trained map");
      map = layout.map(ids.back());
    } else if (!fs::is_directory(map)) {
      map = layout.map(a.map);
    }
    if (head.empty()) {
      std::vector<fs::path> heads;
      if (fs::is_directory(layout.heads_dir())) {
        for (const auto& e : fs::directory_iterator(layout.heads_dir())) {
          if (e.path().extension() == ".fmx") heads.push_back(e.path());
        }
      }
      if (heads.size() != 1) throw Error(ErrorKind::usage, "workspace has several heads; pass --head");
      head = heads.front();
    } else if (!fs::is_regular_file(head)) {
      head = layout.head(a.head);
    }
    if (concepts.empty()) concepts = layout.concepts();
  }
  if (map.empty() || head.empty() || concepts.empty()) {
    throw Error(ErrorKind::usage, "rank needs --map, --head and --concepts (or --workspace)");
  }
  if (a.top < 1) throw Error(ErrorKind::usage, "--top must be >= 1");
  if (!fs::is_directory(map)) throw NotFoundError("map directory not found: " + map.string());

  const MapCheckpoint cp = load_map_checkpoint(map);
  const ClassifierHead h = load_head(head).head;
  const ConceptList list = load_concepts(concepts, cp.h.weights.cols());
  SensitivityRanking r = rank_concepts(h, h.class_index(a.class_name), list, cp.h, a.top);
  r.map_id = artifact_id(map);
  r.head_id = artifact_id(head);
  print_ranking(out, r);
  if (!a.out.empty()) {
    write_text(a.out, ranking_document(r));
    out << "wrote " << a.out << "\n";
  }
}

struct PrepArgs {
  std::string in, out;
  double threshold = kDefaultDedupThreshold;
};

void run_prep(const PrepArgs& a, std::ostream& out) {
  if (!(a.threshold >= -1.0 && a.threshold <= 1.0)) {
    throw Error(ErrorKind::usage, "--dedup-threshold must lie in [-1, 1]");
  }
  const ConceptList in = load_concepts(a.in);
  FilterStats stats;
  const ConceptList filtered = filter_concepts(in, &stats);
  std::size_t near_duplicates = 0;
  const ConceptList kept = dedup_concepts(filtered, a.threshold, &near_duplicates);
  save_concepts(kept, a.out);
  out << "articles removed:        " << stats.articles << "\n"
      << "plurals removed:         " << stats.plurals << "\n"
      << "long phrases removed:    " << stats.too_long << "\n"
      << "near-duplicates removed: " << near_duplicates << "\n"
      << "kept " << kept.size() << " of " << in.size() << " concepts\n";
}

struct SynthArgs {
  std::uint64_t seed = 0;
  std::string dims = "32,32";
  Eigen::Index classes = 4;
  Eigen::Index samples = 1000;
  Eigen::Index bank_size = 64;
  double noise = 0.0;
  std::string bias;
  std::string out_dir;
};

std::pair<Eigen::Index, Eigen::Index> parse_dims(const std::string& s) {
  const auto comma = s.find(',');
  try {
    if (comma == std::string::npos) {
      const long n = std::stol(s);
      return {n, n};
    }
    return {std::stol(s.substr(0, comma)), std::stol(s.substr(comma + 1))};
  } catch (const std::exception&) {
    throw Error(ErrorKind::usage, "--dims expects N or N,M, got \"" + s + "\"");
  }
}

void run_synth(const SynthArgs& a, std::ostream& out) {
  WorldParams p;
  p.seed = a.seed;
  std::tie(p.vl_dim, p.target_dim) = parse_dims(a.dims);
  p.classes = a.classes;
  p.samples = a.samples;
  p.noise_sigma = a.noise;
  p.bank_size = a.bank_size;
  p.attributes = std::min<Eigen::Index>(p.attributes, std::max<Eigen::Index>(0, p.vl_dim - p.classes));
  SyntheticWorld world = gen_world(p);

  if (!a.bias.empty()) {
    const auto colon = a.bias.find(':');
    if (colon == std::string::npos) throw Error(ErrorKind::usage, "--bias expects CLASS:ATTR");
    const BiasSpec spec{a.bias.substr(0, colon), a.bias.substr(colon + 1)};
    world = inject_bias(world, spec);
  }
  export_world(world, a.out_dir);

  out << "world seed " << a.seed << ": n=" << p.vl_dim << " m=" << p.target_dim << ", "
      << world.class_names.size() << " classes, " << world.bank.size() << " concepts, "
      << world.labels.rows() << " samples\n";
  for (const auto& c : world.class_names) out << "  " << c << " -> " << world.planted_concept(c) << "\n";
  if (world.bias) {
    const Eigen::Index ci = world.labels.column(world.bias->target_class);
    const Eigen::Index ai = world.labels.column(world.bias->proxy_attribute);
    Eigen::Index positives = 0, implied = 0;
    for (Eigen::Index i = 0; i < world.train_count; ++i) {
      if (!world.labels.values(i, ci)) continue;
      ++positives;
      if (world.labels.values(i, ai)) ++implied;
    }
    out << "bias " << world.bias->target_class << " => " << world.bias->proxy_attribute
        << " on training rows: " << implied << "/" << positives << " ("
        << fmt("%.1f", positives ? 100.0 * implied / positives : 100.0) << "%)\n";
    if (implied != positives) throw ConsistencyError("bias implication check failed");
  }
  out << "wrote " << a.out_dir << "\n";
}

struct CrsArgs {
  std::string ranking, annotations, out;
  std::size_t top = kDefaultCrsTop;
};

void run_crs(const CrsArgs& a, std::ostream& out) {
  const SensitivityRanking r = read_ranking(a.ranking);
  const AnnotationSet ann = load_annotations(a.annotations);
  const double crs = crs_score(ann, r, a.top);
  const auto relevant = static_cast<std::size_t>(std::lround(crs * static_cast<double>(a.top)));
  out << "CRS@" << a.top << " for " << r.class_name << ": " << fmt("%.9g", round_sig9(crs)) << " ("
      << relevant << "/" << a.top << ")\n";
  if (!a.out.empty()) {
    const json j = {{"class", r.class_name}, {"head_id", r.head_id}, {"map_id", r.map_id},
                    {"top", a.top},          {"relevant", relevant}, {"crs", round_sig9(crs)}};
    write_text(a.out, j.dump(2) + "\n");
  }
}

struct CompareArgs {
  std::string a, b, annotations, category, out;
  std::size_t top = kDefaultCrsTop;
};

void run_compare(const CompareArgs& args, std::ostream& out) {
  const SensitivityRanking ra = truncated(read_ranking(args.a), args.top);
  const SensitivityRanking rb = truncated(read_ranking(args.b), args.top);
  if (ra.class_name != rb.class_name) {
    throw ConsistencyError("rankings are for different classes: " + ra.class_name + " vs " + rb.class_name);
  }
  std::optional<AnnotationSet> ann;
  if (!args.annotations.empty()) ann = load_annotations(args.annotations);
  if (!args.category.empty() && !ann) throw Error(ErrorKind::usage, "--category needs --annotations");

  const ContrastReport rep = compare_models(ra, rb, ann ? ann->labels_for(ra.class_name) : CategoryLabels{});
  json j = to_json(rep);
  const std::string a_name = ra.head_id.empty() ? "a" : ra.head_id;
  const std::string b_name = rb.head_id.empty() ? "b" : rb.head_id;
  out << "class " << rep.class_name << ", top " << rep.top << ": " << a_name << " vs " << b_name << "\n";

  std::vector<std::string> categories = rep.categories;
  if (!args.category.empty()) categories = {args.category};
  for (const auto& c : categories) {
    const auto count = [&](const ContrastSide& s) {
      const auto it = s.category_counts.find(c);
      return it == s.category_counts.end() ? std::size_t{0} : it->second;
    };
    out << "  " << c << ": " << count(rep.a) << "/" << rep.top << " vs " << count(rep.b) << "/"
        << rep.top << "\n";
  }
  if (ann) {
    try {
      const double ca = crs_score(*ann, ra, args.top);
      const double cb = crs_score(*ann, rb, args.top);
      out << "  CRS: " << fmt("%.9g", round_sig9(ca)) << " vs " << fmt("%.9g", round_sig9(cb)) << "\n";
      j["crs"] = {{"a", round_sig9(ca)}, {"b", round_sig9(cb)}};
    } catch (const IncompleteAnnotationError&) {
      out << "  CRS: unavailable (" << rep.a.unlabeled.size() << " and " << rep.b.unlabeled.size()
          << " unlabeled concepts)\n";
    }
  }
  out << "  only in " << a_name << ": " << rep.only_in_a.size() << ", only in " << b_name << ": "
      << rep.only_in_b.size() << "\n";
  for (const auto& t : rep.only_in_a) out << "    < " << t << "\n";
  for (const auto& t : rep.only_in_b) out << "    > " << t << "\n";
  if (!args.out.empty()) write_text(args.out, j.dump(2) + "\n");
}

struct ServeArgs {
  ServiceConfig cfg = ServiceConfig::from_env();
  std::string host = "0.0.0.0";
};

void run_serve(const ServeArgs& a, std::ostream& out) {
  Service service(a.cfg);
  service.load_workspaces();
  const int port = service.bind(a.host);
  out << "serving " << service.workspace_ids().size() << " workspaces from " << a.cfg.data_dir.string()
      << " on " << a.host << ":" << port << std::endl;
  service.serve();
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"TextCAV concept sensitivity tools", "textcav"};
  app.require_subcommand(1);

  TrainArgs train;
  auto* train_cmd = app.add_subcommand("train", "Train the feature maps h and g");
  train_cmd->add_option("--workspace", train.workspace, "Workspace directory or name under TEXTCAV_DATA_DIR");
  train_cmd->add_option("--target-features", train.target, "Target-model image features (.fmx)");
  train_cmd->add_option("--vl-image-features", train.vl_image, "Vision-language image features (.fmx)");
  train_cmd->add_option("--vl-text-features", train.vl_text, "Vision-language text features (.fmx)");
  train_cmd->add_option("--epochs", train.cfg.epochs)->capture_default_str();
  train_cmd->add_option("--lambda", train.cfg.cycle_weight, "Cycle loss weight")->capture_default_str();
  train_cmd->add_option("--seed", train.cfg.seed)->capture_default_str();
  train_cmd->add_option("--batch-size", train.cfg.batch_size)->capture_default_str();
  train_cmd->add_option("--lr", train.cfg.learning_rate)->capture_default_str();
  train_cmd->add_flag("--cycle-squared", train.cfg.cycle_squared, "Square the cycle distances");
  train_cmd->add_option("--config", train.config, "Training config JSON (overrides the flags)");
  train_cmd->add_option("--out", train.out, "Output map directory");

  RankArgs rank;
  auto* rank_cmd = app.add_subcommand("rank", "Rank concepts by directional derivative");
  rank_cmd->add_option("--workspace", rank.workspace, "Workspace directory or name under TEXTCAV_DATA_DIR");
  rank_cmd->add_option("--map", rank.map, "Map directory (or map id within --workspace)");
  rank_cmd->add_option("--head", rank.head, "Head file (or head id within --workspace)");
  rank_cmd->add_option("--concepts", rank.concepts, "Concept JSONL");
  rank_cmd->add_option("--class", rank.class_name, "Class name")->required();
  rank_cmd->add_option("--top", rank.top)->capture_default_str();
  rank_cmd->add_option("--out", rank.out, "Write ranking JSON here");

  PrepArgs prep;
  auto* concepts_cmd = app.add_subcommand("concepts", "Concept list tools");
  concepts_cmd->require_subcommand(1);
  auto* prep_cmd = concepts_cmd->add_subcommand("prep", "Filter and deduplicate a concept list");
  prep_cmd->add_option("--in", prep.in, "Input concept JSONL")->required();
  prep_cmd->add_option("--out", prep.out, "Output concept JSONL")->required();
  prep_cmd->add_option("--dedup-threshold", prep.threshold)->capture_default_str();

  SynthArgs synth;
  auto* synth_cmd = app.add_subcommand("synth", "Generate a synthetic workspace with planted concepts");
  synth_cmd->add_option("--seed", synth.seed)->capture_default_str();
  synth_cmd->add_option("--dims", synth.dims, "N,M: vision-language and target dimensions")->capture_default_str();
  synth_cmd->add_option("--classes", synth.classes)->capture_default_str();
  synth_cmd->add_option("--samples", synth.samples)->capture_default_str();
  synth_cmd->add_option("--bank-size", synth.bank_size)->capture_default_str();
  synth_cmd->add_option("--noise", synth.noise)->capture_default_str();
  synth_cmd->add_option("--bias", synth.bias, "CLASS:ATTR planted dataset bias");
  synth_cmd->add_option("--out-dir", synth.out_dir)->required();

  CrsArgs crs;
  auto* crs_cmd = app.add_subcommand("crs", "Concept relevance score of a ranking");
  crs_cmd->add_option("--ranking", crs.ranking, "Ranking JSON")->required();
  crs_cmd->add_option("--annotations", crs.annotations, "Annotation JSONL")->required();
  crs_cmd->add_option("--top", crs.top)->capture_default_str();
  crs_cmd->add_option("--out", crs.out, "Write JSON here");

  CompareArgs cmp;
  auto* cmp_cmd = app.add_subcommand("compare", "Contrast two rankings of the same class");
  cmp_cmd->add_option("--a", cmp.a, "First ranking JSON")->required();
  cmp_cmd->add_option("--b", cmp.b, "Second ranking JSON")->required();
  cmp_cmd->add_option("--annotations", cmp.annotations, "Annotation JSONL");
  cmp_cmd->add_option("--category", cmp.category, "Report only this category");
  cmp_cmd->add_option("--top", cmp.top)->capture_default_str();
  cmp_cmd->add_option("--out", cmp.out, "Write JSON here");

  ServeArgs serve;
  std::string data_dir = serve.cfg.data_dir.string();
  auto* serve_cmd = app.add_subcommand("serve", "Run the HTTP service");
  serve_cmd->add_option("--port", serve.cfg.port, "Port (TEXTCAV_PORT)")->capture_default_str();
  serve_cmd->add_option("--host", serve.host)->capture_default_str();
  serve_cmd->add_option("--data-dir", data_dir, "Workspace root (TEXTCAV_DATA_DIR)")->capture_default_str();
  serve_cmd->add_option("--embedder-url", serve.cfg.embedder_url, "Embedding sidecar (TEXTCAV_EMBEDDER_URL)");
  serve_cmd->add_option("--embedder-model", serve.cfg.embedder_model_id)->capture_default_str();
  serve_cmd->add_option("--threads", serve.cfg.worker_threads, "HTTP worker threads")->check(CLI::PositiveNumber)->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err) == 0 ? 0 : static_cast<int>(ErrorKind::usage);
  }

  try {
    if (*train_cmd) run_train(train, out);
    else if (*rank_cmd) run_rank(rank, out);
    else if (*prep_cmd) run_prep(prep, out);
    else if (*synth_cmd) run_synth(synth, out);
    else if (*crs_cmd) run_crs(crs, out);
    else if (*cmp_cmd) run_compare(cmp, out);
    else if (*serve_cmd) {
      serve.cfg.data_dir = data_dir;
      serve.cfg.embedding_cache.clear();
      run_serve(serve, out);
    }
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return static_cast<int>(e.kind());
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << "\n";
    return static_cast<int>(ErrorKind::data);
  } catch (const json::exception& e) {
    err << "error: malformed JSON: " << e.what() << "\n";
    return static_cast<int>(ErrorKind::data);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return static_cast<int>(ErrorKind::data);
  }
  return 0;
}

}  // namespace textcav
