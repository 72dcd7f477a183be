#include "textcav/workspace.hpp"

namespace textcav {
namespace fs = std::filesystem;

bool WorkspaceLayout::looks_like_workspace() const {
  return fs::exists(target_image()) && fs::exists(vl_image());
}

std::string artifact_id(const fs::path& p) {
  fs::path q = p;
  if (!q.has_filename()) q = q.parent_path();
  return q.stem().string();
}

void save_map_checkpoint(const fs::path& dir, const AffineMap& h, const AffineMap& g,
                         const nlohmann::json& report) {
  fs::create_directories(dir);
  write_fmx(h.weights, dir / "h.weights.fmx");
  write_fmx(Matrix(h.bias.transpose()), dir / "h.bias.fmx");
  write_fmx(g.weights, dir / "g.weights.fmx");
  write_fmx(Matrix(g.bias.transpose()), dir / "g.bias.fmx");
  write_file_locked(dir / "report.json", report.dump(2) + "\n");
}

MapCheckpoint load_map_checkpoint(const fs::path& dir) {
  auto load_map = [&](const std::string& name) {
    Matrix w = read_fmx(dir / (name + ".weights.fmx"));
    const Matrix b = read_fmx(dir / (name + ".bias.fmx"));
    if (b.rows() != 1 || b.cols() != w.rows()) {
      throw ConsistencyError(dir.string() + ": " + name + " bias is " + std::to_string(b.rows()) +
                             "x" + std::to_string(b.cols()) + ", expected 1x" +
                             std::to_string(w.rows()));
    }
    if (!w.allFinite() || !b.allFinite()) {
      throw ValidationError(dir.string() + ": " + name + " has non-finite entries");
    }
    return AffineMap(std::move(w), b.row(0).transpose());
  };
  MapCheckpoint out;
  out.id = artifact_id(dir);
  out.h = load_map("h");
  out.g = load_map("g");
  if (out.g.in_dim() != out.h.out_dim() || out.g.out_dim() != out.h.in_dim()) {
    throw ConsistencyError(dir.string() + ": h and g dimensions do not match");
  }
  const fs::path report = dir / "report.json";
  if (fs::exists(report)) {
    try {
      out.report = nlohmann::json::parse(read_file_locked(report));
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError(report.string() + ": " + e.what());
    }
  }
  return out;
}

TrainingData Workspace::training_data() const {
  return {target_image.features, vl_image.features,
          vl_text ? vl_text->features : Matrix(0, vl_image.dim())};
}

Workspace load_workspace(const fs::path& root, const std::string& id) {
  const WorkspaceLayout layout{root};
  Workspace ws;
  ws.id = id;
  ws.root = root;
  ws.target_image = load_feature_set(layout.target_image());
  ws.vl_image = load_feature_set(layout.vl_image());
  if (fs::exists(layout.vl_text())) ws.vl_text = load_feature_set(layout.vl_text());
  validate_workspace(ws.target_image, ws.vl_image, ws.vl_text ? &*ws.vl_text : nullptr, nullptr);

  if (fs::exists(layout.heads_dir())) {
    for (const auto& entry : fs::directory_iterator(layout.heads_dir())) {
      if (entry.path().extension() != ".fmx") continue;
      ClassifierHead head = load_head(entry.path()).head;
      validate_workspace(ws.target_image, ws.vl_image, nullptr, &head);
      ws.heads.emplace(artifact_id(entry.path()), std::move(head));
    }
  }
  if (fs::exists(layout.concepts())) {
    ws.concepts = load_concepts(layout.concepts(), ws.vl_image.dim());
  }
  if (fs::exists(layout.annotations())) ws.annotations = load_annotations(layout.annotations());
  if (fs::exists(layout.maps_dir())) {
    for (const auto& entry : fs::directory_iterator(layout.maps_dir())) {
      if (!entry.is_directory()) continue;
      const std::string name = entry.path().filename().string();
      if (name.starts_with(".")) continue;  // in-progress writes
      MapCheckpoint cp = load_map_checkpoint(entry.path());
      if (cp.h.in_dim() != ws.vl_image.dim() || cp.h.out_dim() != ws.target_image.dim()) {
        throw ConsistencyError("map " + name + " does not match the workspace dimensions");
      }
      ws.maps.emplace(name, std::move(cp));
    }
  }
  return ws;
}

}  // namespace textcav
