#include "dataset.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <unordered_map>

namespace pskn {

namespace {

namespace fs = std::filesystem;

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      fields.push_back(trim(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  fields.push_back(trim(cur));
  return fields;
}

std::vector<std::string> read_lines(const std::string& text) {
  std::vector<std::string> lines;
  std::string cur;
  for (char c : text) {
    if (c == '\n') {
      lines.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (!cur.empty()) lines.push_back(cur);
  return lines;
}

std::string read_file(const std::string& path, const char* what) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(std::string("cannot open ") + what + ": " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

std::string entry_key(const std::string& class_name,
                      const std::string& instance) {
  return class_name + '\x1f' + instance;
}

}  // namespace

Split parse_split(const std::string& name) {
  if (name == "train") return Split::kTrain;
  if (name == "test") return Split::kTest;
  throw ValidationError("unknown split '" + name +
                        "' (expected train or test)");
}

std::string split_name(Split split) {
  return split == Split::kTrain ? "train" : "test";
}

void DatasetIndex::rebuild_classes() {
  std::set<std::string> names;
  for (const auto& e : entries) names.insert(e.class_name);
  classes.assign(names.begin(), names.end());
}

int DatasetIndex::label_of(const std::string& class_name) const {
  auto it = std::lower_bound(classes.begin(), classes.end(), class_name);
  if (it == classes.end() || *it != class_name) return -1;
  return static_cast<int>(it - classes.begin());
}

void DatasetIndex::validate() const {
  std::set<std::string> seen;
  for (const auto& e : entries) {
    const std::string key = entry_key(e.class_name, e.instance) + '\x1f' +
                            split_name(e.split);
    if (!seen.insert(key).second)
      throw ValidationError("duplicate index entry: " + e.class_name + "/" +
                            e.instance + " in split " + split_name(e.split));
  }
}

DatasetIndex scan_dataset_root(const std::string& root) {
  if (!fs::is_directory(root))
    throw ValidationError("dataset root is not a directory: " + root);
  DatasetIndex index;
  for (const auto& class_dir : fs::directory_iterator(root)) {
    if (!class_dir.is_directory()) continue;
    const std::string class_name = class_dir.path().filename().string();
    for (Split split : {Split::kTrain, Split::kTest}) {
      const fs::path split_dir = class_dir.path() / split_name(split);
      if (!fs::is_directory(split_dir)) continue;
      for (const auto& file : fs::directory_iterator(split_dir)) {
        if (!file.is_regular_file() || file.path().extension() != ".off")
          continue;
        index.entries.push_back({class_name, file.path().stem().string(),
                                 split, file.path().string()});
      }
    }
  }
  std::sort(index.entries.begin(), index.entries.end(),
            [](const IndexEntry& a, const IndexEntry& b) {
              if (a.class_name != b.class_name)
                return a.class_name < b.class_name;
              if (a.split != b.split) return a.split == Split::kTrain;
              return a.instance < b.instance;
            });
  index.rebuild_classes();
  index.validate();
  return index;
}

DatasetIndex load_index_csv(const std::string& path) {
  const auto lines = read_lines(read_file(path, "index CSV"));
  if (lines.empty() || split_csv_line(lines[0]) !=
                           std::vector<std::string>{"class", "instance",
                                                    "split", "path"})
    throw ValidationError("index CSV must start with header "
                          "class,instance,split,path: " + path);
  DatasetIndex index;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (trim(lines[i]).empty()) continue;
    const auto f = split_csv_line(lines[i]);
    if (f.size() != 4)
      throw ValidationError("index CSV line " + std::to_string(i + 1) +
                            ": expected 4 fields, got " +
                            std::to_string(f.size()));
    if (f[0].empty() || f[1].empty())
      throw ValidationError("index CSV line " + std::to_string(i + 1) +
                            ": class and instance must be non-empty");
    index.entries.push_back({f[0], f[1], parse_split(f[2]), f[3]});
  }
  index.rebuild_classes();
  index.validate();
  return index;
}

void write_index_csv(const DatasetIndex& index, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write index CSV: " + path);
  out << "class,instance,split,path\n";
  for (const auto& e : index.entries)
    out << e.class_name << ',' << e.instance << ',' << split_name(e.split)
        << ',' << e.path << '\n';
}

RefinementManifest parse_manifest_csv(const std::string& text,
                                      const std::string& source_name) {
  const auto lines = read_lines(text);
  if (lines.empty() || split_csv_line(lines[0]) !=
                           std::vector<std::string>{"class", "instance",
                                                    "action", "target"})
    throw ManifestError("manifest must start with header "
                        "class,instance,action,target: " + source_name);
  RefinementManifest manifest;
  std::set<std::string> seen;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (trim(lines[i]).empty()) continue;
    const std::string where =
        source_name + " line " + std::to_string(i + 1);
    const auto f = split_csv_line(lines[i]);
    if (f.size() != 4)
      throw ManifestError(where + ": expected 4 fields, got " +
                          std::to_string(f.size()));
    RefineRecord rec;
    rec.class_name = f[0];
    rec.instance = f[1];
    rec.target = f[3];
    if (rec.class_name.empty() || rec.instance.empty())
      throw ManifestError(where + ": class and instance must be non-empty");
    if (f[2] == "move") {
      rec.action = RefineAction::kMove;
      if (rec.target.empty())
        throw ManifestError(where + ": move needs a target class");
      if (rec.target == rec.class_name)
        throw ManifestError(where + ": move target equals the source class");
    } else if (f[2] == "remove") {
      rec.action = RefineAction::kRemove;
      if (!rec.target.empty())
        throw ManifestError(where + ": remove must leave target empty");
    } else {
      throw ManifestError(where + ": unknown action '" + f[2] +
                          "' (expected move or remove)");
    }
    if (!seen.insert(entry_key(rec.class_name, rec.instance)).second)
      throw ManifestError(where + ": instance " + rec.class_name + "/" +
                          rec.instance + " appears twice");
    manifest.records.push_back(std::move(rec));
  }
  return manifest;
}

RefinementManifest load_manifest_csv(const std::string& path) {
  return parse_manifest_csv(read_file(path, "manifest"), path);
}

std::size_t AuditReport::class_row(const std::string& name) const {
  auto it = std::lower_bound(classes.begin(), classes.end(), name);
  if (it == classes.end() || *it != name)
    throw ValueError("audit report does not cover class '" + name + "'");
  return static_cast<std::size_t>(it - classes.begin());
}

std::size_t AuditReport::moved(const std::string& src,
                               const std::string& dst) const {
  return moves[class_row(src)][class_row(dst)];
}

std::size_t AuditReport::final_count(const std::string& dst) const {
  const std::size_t col = class_row(dst);
  std::size_t total = 0;
  for (const auto& row : moves) total += row[col];
  return total;
}

std::size_t AuditReport::total_removed() const {
  std::size_t total = 0;
  for (std::size_t r : removed) total += r;
  return total;
}

std::size_t AuditReport::total_original() const {
  std::size_t total = 0;
  for (std::size_t o : original) total += o;
  return total;
}

std::pair<DatasetIndex, AuditReport> apply_manifest(
    const DatasetIndex& index, const RefinementManifest& manifest) {
  std::unordered_map<std::string, const RefineRecord*> by_instance;
  std::set<std::string> touched;
  for (const auto& rec : manifest.records) {
    by_instance[entry_key(rec.class_name, rec.instance)] = &rec;
    touched.insert(rec.class_name);
    if (rec.action == RefineAction::kMove) touched.insert(rec.target);
  }

  AuditReport report;
  report.classes.assign(touched.begin(), touched.end());
  const std::size_t nc = report.classes.size();
  report.original.assign(nc, 0);
  report.removed.assign(nc, 0);
  report.moves.assign(nc, std::vector<std::size_t>(nc, 0));
  auto row = [&](const std::string& name) { return report.class_row(name); };

  for (const auto& e : index.entries)
    if (touched.count(e.class_name)) ++report.original[row(e.class_name)];

  DatasetIndex out;
  std::set<std::string> applied;
  for (const auto& e : index.entries) {
    auto it = by_instance.find(entry_key(e.class_name, e.instance));
    if (it == by_instance.end()) {
      out.entries.push_back(e);
      continue;
    }
    const RefineRecord& rec = *it->second;
    applied.insert(it->first);
    if (rec.action == RefineAction::kRemove) {
      ++report.removed[row(e.class_name)];
    } else {
      ++report.moves[row(e.class_name)][row(rec.target)];
      IndexEntry moved = e;
      moved.class_name = rec.target;
      out.entries.push_back(std::move(moved));
    }
  }

  for (const auto& rec : manifest.records)
    if (!applied.count(entry_key(rec.class_name, rec.instance)))
      throw ManifestError("manifest names unknown instance " +
                          rec.class_name + "/" + rec.instance);

  // Diagonal: whatever was not moved out or removed stayed.
  for (std::size_t c = 0; c < nc; ++c) {
    std::size_t gone = report.removed[c];
    for (std::size_t d = 0; d < nc; ++d)
      if (d != c) gone += report.moves[c][d];
    report.moves[c][c] = report.original[c] - gone;
  }

  out.rebuild_classes();
  out.validate();
  return {std::move(out), std::move(report)};
}

std::string audit_csv(const AuditReport& report) {
  std::ostringstream out;
  out << "class";
  for (const auto& c : report.classes) out << ',' << c;
  out << ",removed,total\n";
  for (std::size_t r = 0; r < report.classes.size(); ++r) {
    out << report.classes[r];
    for (std::size_t d = 0; d < report.classes.size(); ++d)
      out << ',' << report.moves[r][d];
    out << ',' << report.removed[r] << ',' << report.original[r] << '\n';
  }
  out << "total";
  for (const auto& c : report.classes) out << ',' << report.final_count(c);
  out << ',' << report.total_removed() << ',' << report.total_original()
      << '\n';
  return out.str();
}

std::string refine_summary(const AuditReport& report) {
  std::ostringstream out;
  out << "refinement summary\n";
  for (std::size_t r = 0; r < report.classes.size(); ++r)
    out << "  " << report.classes[r] << ": " << report.original[r] << " -> "
        << report.final_count(report.classes[r]) << '\n';
  out << "removed: " << report.total_removed() << '\n';
  out << "touched instances: " << report.total_original() << '\n';
  return out.str();
}

DatasetStats dataset_stats(const DatasetIndex& index) {
  DatasetStats stats;
  stats.n_classes = index.classes.size();
  stats.n_instances = index.entries.size();
  if (index.classes.empty()) return stats;
  std::unordered_map<std::string, std::size_t> counts;
  for (const auto& e : index.entries) ++counts[e.class_name];
  stats.min_count = stats.n_instances;
  for (const auto& c : index.classes) {
    const std::size_t n = counts[c];
    stats.per_class.emplace_back(c, n);
    stats.min_count = std::min(stats.min_count, n);
    stats.max_count = std::max(stats.max_count, n);
  }
  stats.mean_count = static_cast<double>(stats.n_instances) /
                     static_cast<double>(stats.n_classes);
  return stats;
}

std::string stats_text(const DatasetStats& stats) {
  char mean[32];
  std::snprintf(mean, sizeof mean, "%.3f", stats.mean_count);
  std::ostringstream out;
  out << "classes: " << stats.n_classes << '\n'
      << "instances: " << stats.n_instances << '\n'
      << "min class count: " << stats.min_count << '\n'
      << "max class count: " << stats.max_count << '\n'
      << "mean class count: " << mean << '\n';
  return out.str();
}

bool detect_flat(const PointCloud& cloud, double tau) {
  if (cloud.n < 4)
    throw ValueError("detect_flat: need at least 4 points, got " +
                     std::to_string(cloud.n));
  double mean[3] = {0, 0, 0};
  for (std::size_t i = 0; i < cloud.n; ++i)
    for (int a = 0; a < 3; ++a) mean[a] += cloud.point(i)[a];
  for (double& m : mean) m /= static_cast<double>(cloud.n);

  Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
  for (std::size_t i = 0; i < cloud.n; ++i) {
    Eigen::Vector3d d(cloud.point(i)[0] - mean[0], cloud.point(i)[1] - mean[1],
                      cloud.point(i)[2] - mean[2]);
    cov += d * d.transpose();
  }
  cov /= static_cast<double>(cloud.n);

  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> solver(cov);
  const double lo = std::max(solver.eigenvalues()(0), 0.0);
  const double hi = solver.eigenvalues()(2);
  if (hi <= 0.0) return true;  // all points coincide
  return lo < tau * hi;
}

void save_point_cache(const std::string& path, const PointCloud& cloud) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write point cache: " + path);
  const char magic[4] = {'P', 'S', 'P', 'C'};
  const std::uint32_t version = 1;
  const std::uint64_t n = cloud.n;
  out.write(magic, 4);
  out.write(reinterpret_cast<const char*>(&version), sizeof version);
  out.write(reinterpret_cast<const char*>(&n), sizeof n);
  out.write(reinterpret_cast<const char*>(cloud.points.data()),
            static_cast<std::streamsize>(cloud.points.size() * 8));
  if (!out) throw IoError("short write on point cache: " + path);
}

PointCloud load_point_cache(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open point cache: " + path);
  char magic[4];
  std::uint32_t version = 0;
  std::uint64_t n = 0;
  in.read(magic, 4);
  in.read(reinterpret_cast<char*>(&version), sizeof version);
  in.read(reinterpret_cast<char*>(&n), sizeof n);
  if (!in || std::memcmp(magic, "PSPC", 4) != 0)
    throw IoError("not a point cache file: " + path);
  if (version != 1)
    throw IoError("unsupported point cache version " +
                  std::to_string(version) + ": " + path);
  PointCloud cloud;
  cloud.n = n;
  cloud.points.resize(n * 3);
  in.read(reinterpret_cast<char*>(cloud.points.data()),
          static_cast<std::streamsize>(cloud.points.size() * 8));
  if (!in) throw IoError("truncated point cache: " + path);
  return cloud;
}

BatchStream::BatchStream(const DatasetIndex& index, Split split,
                         LoaderOptions opts)
    : index_(index), split_(split), opts_(std::move(opts)) {
  for (std::size_t i = 0; i < index_.entries.size(); ++i)
    if (index_.entries[i].split == split_) order_.push_back(i);
  if (order_.empty())
    throw ValueError("no entries in split " + split_name(split_));
  Rng rng(mix_seed(opts_.seed, opts_.epoch));
  rng.shuffle(order_);
}

std::size_t BatchStream::batch_count() const {
  return (order_.size() + opts_.batch_size - 1) / opts_.batch_size;
}

PointCloud BatchStream::load_entry(const IndexEntry& entry,
                                   const LoaderOptions& opts) {
  const std::string key =
      entry.class_name + "/" + entry.instance + "/" + split_name(entry.split);
  std::string cache_path;
  if (!opts.cache_dir.empty()) {
    char tag[64];
    std::snprintf(tag, sizeof tag, "_%zu_%016llx.pspc", opts.n_points,
                  static_cast<unsigned long long>(opts.seed));
    cache_path = opts.cache_dir + "/" + entry.class_name + "_" +
                 split_name(entry.split) + "_" + entry.instance + tag;
    if (fs::exists(cache_path)) return load_point_cache(cache_path);
  }
  if (entry.path.empty())
    throw IoError("no source path for instance " + entry.class_name + "/" +
                  entry.instance);
  Mesh mesh = read_off_file(entry.path);
  PointCloud cloud =
      sample_mesh(mesh, opts.n_points, mix_seed(opts.seed, fnv1a(key)));
  cloud = normalize_unit_sphere(cloud);
  if (!cache_path.empty()) save_point_cache(cache_path, cloud);
  return cloud;
}

bool BatchStream::next(Batch& out) {
  out.clouds.clear();
  out.labels.clear();
  if (cursor_ >= order_.size()) return false;
  const std::size_t end =
      std::min(cursor_ + opts_.batch_size, order_.size());
  for (; cursor_ < end; ++cursor_) {
    const IndexEntry& entry = index_.entries[order_[cursor_]];
    PointCloud cloud = load_entry(entry, opts_);
    if (split_ == Split::kTrain && opts_.augment.mode != AugmentMode::kNone)
      cloud = augment(cloud, opts_.augment,
                      mix_seed(opts_.epoch, order_[cursor_]));
    const int label = index_.label_of(entry.class_name);
    out.clouds.push_back(std::move(cloud));
    out.labels.push_back(label);
  }
  return true;
}

}  // namespace pskn
