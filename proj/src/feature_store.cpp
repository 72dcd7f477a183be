#include "textcav/feature_store.hpp"

#include <fcntl.h>
#include <sys/file.h>
#include <sys/stat.h>
#include <unistd.h>

#include <algorithm>
#include <bit>
#include <cctype>
#include <cerrno>
#include <cstring>
#include <map>
#include <set>
#include <sstream>

#include <json.hpp>

namespace textcav {
namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

constexpr char kMagic[4] = {'F', 'M', 'X', '1'};
constexpr std::size_t kHeaderBytes = 16;

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

std::uint32_t get_u32(std::string_view b, std::size_t off) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) {
    v |= static_cast<std::uint32_t>(static_cast<unsigned char>(b[off + i])) << (8 * i);
  }
  return v;
}

class FileHandle {
 public:
  FileHandle(const fs::path& path, int flags, int lock_op) {
    fd_ = ::open(path.c_str(), flags | O_CLOEXEC, 0644);
    if (fd_ < 0) {
      throw NotFoundError("cannot open " + path.string() + ": " + std::strerror(errno));
    }
    if (::flock(fd_, lock_op) != 0) {
      ::close(fd_);
      throw Error(ErrorKind::data, "cannot lock " + path.string());
    }
  }
  ~FileHandle() {
    if (fd_ >= 0) ::close(fd_);  // releases the flock
  }
  FileHandle(const FileHandle&) = delete;
  FileHandle& operator=(const FileHandle&) = delete;
  int fd() const { return fd_; }

 private:
  int fd_ = -1;
};

std::vector<float> json_to_floats(const json& j, const std::string& where) {
  if (!j.is_array()) throw ParseError(where + ": expected an array of numbers");
  std::vector<float> out;
  out.reserve(j.size());
  for (const auto& x : j) {
    if (!x.is_number()) throw ParseError(where + ": expected an array of numbers");
    out.push_back(static_cast<float>(x.get<double>()));
  }
  return out;
}

json floats_to_json(const Vector& v) {
  json arr = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) arr.push_back(static_cast<double>(v(i)));
  return arr;
}

Vector to_vector(const std::vector<float>& xs) {
  Vector v(static_cast<Eigen::Index>(xs.size()));
  for (std::size_t i = 0; i < xs.size(); ++i) v(static_cast<Eigen::Index>(i)) = xs[i];
  return v;
}

json parse_json_file(const fs::path& path) {
  const std::string text = read_file_locked(path);
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

}  // namespace

std::string_view to_string(SpaceTag tag) {
  switch (tag) {
    case SpaceTag::target_image: return "target_image";
    case SpaceTag::vl_image: return "vl_image";
    case SpaceTag::vl_text: return "vl_text";
  }
  return "unknown";
}

SpaceTag parse_space_tag(std::string_view s) {
  if (s == "target_image") return SpaceTag::target_image;
  if (s == "vl_image") return SpaceTag::vl_image;
  if (s == "vl_text") return SpaceTag::vl_text;
  throw FormatError("unknown space tag \"" + std::string(s) + "\"");
}

Eigen::Index ClassifierHead::class_index(std::string_view name) const {
  for (std::size_t i = 0; i < class_names.size(); ++i) {
    if (class_names[i] == name) return static_cast<Eigen::Index>(i);
  }
  std::string valid;
  for (const auto& n : class_names) valid += (valid.empty() ? "" : ", ") + n;
  throw NotFoundError("unknown class \"" + std::string(name) + "\"; valid classes: " + valid);
}

std::string trim(std::string_view text) {
  auto is_space = [](unsigned char c) { return std::isspace(c) != 0; };
  std::size_t b = 0;
  std::size_t e = text.size();
  while (b < e && is_space(static_cast<unsigned char>(text[b]))) ++b;
  while (e > b && is_space(static_cast<unsigned char>(text[e - 1]))) --e;
  return std::string(text.substr(b, e - b));
}

std::string normalize_concept_text(std::string_view text) {
  std::string out = trim(text);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

void write_file_locked(const fs::path& path, std::string_view bytes) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  FileHandle fh(path, O_WRONLY | O_CREAT, LOCK_EX);
  if (::ftruncate(fh.fd(), 0) != 0) {
    throw Error(ErrorKind::data, "cannot truncate " + path.string());
  }
  std::size_t done = 0;
  while (done < bytes.size()) {
    const ssize_t n = ::write(fh.fd(), bytes.data() + done, bytes.size() - done);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw Error(ErrorKind::data, "write failed for " + path.string());
    }
    done += static_cast<std::size_t>(n);
  }
}

std::string read_file_locked(const fs::path& path) {
  FileHandle fh(path, O_RDONLY, LOCK_SH);
  std::string out;
  char buf[1 << 16];
  for (;;) {
    const ssize_t n = ::read(fh.fd(), buf, sizeof buf);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw Error(ErrorKind::data, "read failed for " + path.string());
    }
    if (n == 0) break;
    out.append(buf, static_cast<std::size_t>(n));
  }
  return out;
}

std::string encode_fmx(const Matrix& m) {
  std::string out;
  out.reserve(kHeaderBytes + static_cast<std::size_t>(m.size()) * 4);
  out.append(kMagic, 4);
  put_u32(out, kFmxVersion);
  put_u32(out, static_cast<std::uint32_t>(m.rows()));
  put_u32(out, static_cast<std::uint32_t>(m.cols()));
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    put_u32(out, std::bit_cast<std::uint32_t>(m.data()[i]));
  }
  return out;
}

Matrix decode_fmx(std::string_view bytes) {
  if (bytes.size() < 4 || !std::equal(kMagic, kMagic + 4, bytes.begin())) {
    throw FormatError("bad magic at byte offset 0 (expected \"FMX1\")");
  }
  if (bytes.size() < kHeaderBytes) {
    throw FormatError("truncated header at byte offset " + std::to_string(bytes.size()));
  }
  const std::uint32_t version = get_u32(bytes, 4);
  if (version != kFmxVersion) {
    throw FormatError("unsupported version " + std::to_string(version) + " at byte offset 4");
  }
  const std::uint64_t rows = get_u32(bytes, 8);
  const std::uint64_t cols = get_u32(bytes, 12);
  const std::uint64_t payload = rows * cols * 4;
  const std::uint64_t have = bytes.size() - kHeaderBytes;
  if (have < payload) {
    throw FormatError("truncated payload at byte offset " + std::to_string(bytes.size()) +
                      ": header declares " + std::to_string(rows) + "x" + std::to_string(cols) +
                      " (" + std::to_string(payload) + " bytes) but only " +
                      std::to_string(have) + " bytes follow the header");
  }
  if (have > payload) {
    throw FormatError("unexpected trailing data at byte offset " +
                      std::to_string(kHeaderBytes + payload));
  }
  Matrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  for (std::uint64_t i = 0; i < rows * cols; ++i) {
    m.data()[i] = std::bit_cast<float>(get_u32(bytes, kHeaderBytes + 4 * i));
  }
  return m;
}

void write_fmx(const Matrix& m, const fs::path& path) {
  write_file_locked(path, encode_fmx(m));
}

Matrix read_fmx(const fs::path& path) {
  if (!fs::exists(path)) throw NotFoundError("missing file " + path.string());
  try {
    return decode_fmx(read_file_locked(path));
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

fs::path meta_path_for(const fs::path& data_path) {
  fs::path p = data_path;
  p.replace_extension(".meta.json");
  return p;
}

FeatureSet load_feature_set(const fs::path& data_path, const fs::path& meta_path) {
  if (!fs::exists(data_path)) throw NotFoundError("missing file " + data_path.string());
  if (!fs::exists(meta_path)) throw NotFoundError("missing file " + meta_path.string());
  FeatureSet out;
  out.features = read_fmx(data_path);
  const json meta = parse_json_file(meta_path);
  try {
    out.tag = parse_space_tag(meta.at("tag").get<std::string>());
    out.model_id = meta.value("model_id", "");
    out.normalized = meta.value("normalized", false);
    out.source_dataset = meta.value("source_dataset", "");
    if (meta.contains("dim") && meta.at("dim").get<Eigen::Index>() != out.dim()) {
      throw ConsistencyError(meta_path.string() + ": metadata dim " +
                             std::to_string(meta.at("dim").get<Eigen::Index>()) +
                             " disagrees with matrix cols " + std::to_string(out.dim()));
    }
    if (meta.contains("count") && meta.at("count").get<Eigen::Index>() != out.count()) {
      throw ConsistencyError(meta_path.string() + ": metadata count " +
                             std::to_string(meta.at("count").get<Eigen::Index>()) +
                             " disagrees with matrix rows " + std::to_string(out.count()));
    }
  } catch (const json::exception& e) {
    throw FormatError(meta_path.string() + ": " + e.what());
  }
  if (out.dim() == 0 || out.count() == 0) {
    throw ValidationError(data_path.string() + ": empty feature matrix");
  }
  if (!out.features.allFinite()) {
    throw ValidationError(data_path.string() + ": non-finite entries");
  }
  if (out.normalized) {
    for (Eigen::Index r = 0; r < out.count(); ++r) {
      const double n = l2_norm(out.features.row(r));
      if (std::abs(n - 1.0) > kUnitNormTolerance) {
        throw ValidationError(data_path.string() + ": row " + std::to_string(r) +
                              " has norm " + std::to_string(n) +
                              " but metadata declares normalized rows");
      }
    }
  }
  return out;
}

void save_feature_set(const FeatureSet& fset, const fs::path& data_path) {
  write_fmx(fset.features, data_path);
  json meta = {
      {"tag", std::string(to_string(fset.tag))},
      {"model_id", fset.model_id},
      {"dim", fset.dim()},
      {"count", fset.count()},
      {"normalized", fset.normalized},
      {"source_dataset", fset.source_dataset},
  };
  write_file_locked(meta_path_for(data_path), meta.dump(2) + "\n");
}

void validate_head(const ClassifierHead& head) {
  const auto k = head.num_classes();
  if (static_cast<Eigen::Index>(head.class_names.size()) != k) {
    throw ConsistencyError("head has " + std::to_string(k) + " weight rows but " +
                           std::to_string(head.class_names.size()) + " class names");
  }
  if (head.bias.size() != k) {
    throw ConsistencyError("head bias has length " + std::to_string(head.bias.size()) +
                           ", expected " + std::to_string(k));
  }
  std::set<std::string> seen;
  for (const auto& n : head.class_names) {
    if (!seen.insert(n).second) throw DuplicateError("duplicate class name \"" + n + "\"");
  }
  if (!head.weights.allFinite() || !head.bias.allFinite()) {
    throw ValidationError("head has non-finite entries");
  }
}

LoadedHead load_head(const fs::path& weights_path, const fs::path& meta_path) {
  if (!fs::exists(weights_path)) throw NotFoundError("missing file " + weights_path.string());
  if (!fs::exists(meta_path)) throw NotFoundError("missing file " + meta_path.string());
  LoadedHead out;
  out.head.weights = read_fmx(weights_path);
  const json meta = parse_json_file(meta_path);
  try {
    out.head.class_names = meta.at("class_names").get<std::vector<std::string>>();
    out.head.model_id = meta.value("model_id", "");
    if (meta.contains("bias") && !meta.at("bias").is_null()) {
      out.head.bias = to_vector(json_to_floats(meta.at("bias"), meta_path.string() + ": bias"));
    } else {
      out.head.bias = Vector::Zero(out.head.weights.rows());
      out.report.bias_defaulted = true;
    }
  } catch (const json::exception& e) {
    throw FormatError(meta_path.string() + ": " + e.what());
  }
  validate_head(out.head);
  return out;
}

void save_head(const ClassifierHead& head, const fs::path& weights_path) {
  validate_head(head);
  write_fmx(head.weights, weights_path);
  json meta = {
      {"model_id", head.model_id},
      {"class_names", head.class_names},
      {"dim", head.feature_dim()},
      {"bias", floats_to_json(head.bias)},
  };
  write_file_locked(meta_path_for(weights_path), meta.dump(2) + "\n");
}

ConceptList parse_concepts(std::string_view jsonl, std::optional<Eigen::Index> expected_dim) {
  ConceptList out;
  std::map<std::string, std::vector<std::size_t>> lines_by_text;
  std::optional<Eigen::Index> dim = expected_dim;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= jsonl.size()) {
    const std::size_t nl = jsonl.find('\n', pos);
    const std::string_view line =
        jsonl.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
    pos = (nl == std::string_view::npos) ? jsonl.size() + 1 : nl + 1;
    ++line_no;
    if (trim(line).empty()) continue;
    const std::string where = "line " + std::to_string(line_no);
    json rec;
    try {
      rec = json::parse(line);
    } catch (const json::parse_error& e) {
      throw ParseError(where + ": " + e.what());
    }
    if (!rec.is_object() || !rec.contains("text") || !rec.at("text").is_string()) {
      throw ParseError(where + ": expected an object with a string \"text\"");
    }
    ConceptEntry entry;
    entry.text = trim(rec.at("text").get<std::string>());
    if (entry.text.empty()) throw ParseError(where + ": empty concept text");
    if (rec.contains("embedding") && !rec.at("embedding").is_null()) {
      Vector e = to_vector(json_to_floats(rec.at("embedding"), where + ": embedding"));
      if (dim && e.size() != *dim) {
        throw ConsistencyError(where + ": embedding has length " + std::to_string(e.size()) +
                               ", expected " + std::to_string(*dim));
      }
      dim = e.size();
      const double n = l2_norm(e);
      if (std::abs(n - 1.0) > kUnitNormTolerance) {
        throw ValidationError(where + ": embedding norm " + std::to_string(n) + " is not unit");
      }
      entry.embedding = std::move(e);
    }
    if (rec.contains("cav") && !rec.at("cav").is_null()) {
      entry.cav = to_vector(json_to_floats(rec.at("cav"), where + ": cav"));
    }
    lines_by_text[normalize_concept_text(entry.text)].push_back(line_no);
    out.entries.push_back(std::move(entry));
  }
  std::string dups;
  for (const auto& [text, lines] : lines_by_text) {
    if (lines.size() < 2) continue;
    dups += (dups.empty() ? "" : "; ") + ("\"" + text + "\" on lines ");
    for (std::size_t i = 0; i < lines.size(); ++i) {
      dups += (i ? ", " : "") + std::to_string(lines[i]);
    }
  }
  if (!dups.empty()) throw DuplicateError("duplicate concepts: " + dups);
  return out;
}

ConceptList load_concepts(const fs::path& path, std::optional<Eigen::Index> expected_dim) {
  if (!fs::exists(path)) throw NotFoundError("missing file " + path.string());
  try {
    ConceptList list = parse_concepts(read_file_locked(path), expected_dim);
    list.provenance = path.string();
    return list;
  } catch (const Error& e) {
    throw Error(e.kind(), path.string() + ": " + e.what());
  }
}

std::string serialize_concepts(const ConceptList& list) {
  std::string out;
  for (const auto& e : list.entries) {
    json rec = {{"text", e.text}};
    if (e.embedding) rec["embedding"] = floats_to_json(*e.embedding);
    if (e.cav) rec["cav"] = floats_to_json(*e.cav);
    out += rec.dump();
    out += '\n';
  }
  return out;
}

void save_concepts(const ConceptList& list, const fs::path& path) {
  write_file_locked(path, serialize_concepts(list));
}

void validate_workspace(const FeatureSet& target_image, const FeatureSet& vl_image,
                        const FeatureSet* vl_text, const ClassifierHead* head) {
  if (target_image.tag != SpaceTag::target_image) {
    throw ConsistencyError("target features carry tag " + std::string(to_string(target_image.tag)));
  }
  if (vl_image.tag != SpaceTag::vl_image) {
    throw ConsistencyError("vision-language image features carry tag " +
                           std::string(to_string(vl_image.tag)));
  }
  if (target_image.count() != vl_image.count()) {
    throw ConsistencyError("paired image sets differ in count: " +
                           std::to_string(target_image.count()) + " vs " +
                           std::to_string(vl_image.count()));
  }
  if (vl_text) {
    if (vl_text->tag != SpaceTag::vl_text) {
      throw ConsistencyError("text features carry tag " + std::string(to_string(vl_text->tag)));
    }
    if (vl_text->dim() != vl_image.dim()) {
      throw ConsistencyError("vision-language image dim " + std::to_string(vl_image.dim()) +
                             " differs from text dim " + std::to_string(vl_text->dim()));
    }
  }
  if (head && head->feature_dim() != target_image.dim()) {
    throw ConsistencyError("head expects " + std::to_string(head->feature_dim()) +
                           "-dim features but target features are " +
                           std::to_string(target_image.dim()) + "-dim");
  }
}

}  // namespace textcav
