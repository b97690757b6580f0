#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "augmentation.hpp"
#include "geometry.hpp"
#include "mesh.hpp"

namespace pskn {

enum class Split { kTrain, kTest };

Split parse_split(const std::string& name);
std::string split_name(Split split);

struct IndexEntry {
  std::string class_name;
  std::string instance;
  Split split = Split::kTrain;
  std::string path;  // source mesh; may be empty for index-only operations
};

// Ordered view of a dataset: entries plus the sorted unique class list that
// defines label ids.
struct DatasetIndex {
  std::vector<IndexEntry> entries;
  std::vector<std::string> classes;

  void rebuild_classes();
  int label_of(const std::string& class_name) const;  // -1 when unknown
  // Throws on duplicate (class, instance, split).
  void validate() const;
};

// Walks <root>/<class>/<split>/<instance>.off. Entries and classes come out
// sorted, independent of directory iteration order.
DatasetIndex scan_dataset_root(const std::string& root);

// Explicit index: CSV with header `class,instance,split,path`.
DatasetIndex load_index_csv(const std::string& path);
void write_index_csv(const DatasetIndex& index, const std::string& path);

enum class RefineAction { kMove, kRemove };

struct RefineRecord {
  std::string class_name;
  std::string instance;
  RefineAction action = RefineAction::kMove;
  std::string target;  // destination class for moves, empty for removes
};

struct RefinementManifest {
  std::vector<RefineRecord> records;
};

// CSV with header `class,instance,action,target`; action is move or remove.
// Duplicate instances, move targets equal to the source, and stray targets
// on removes are all rejected.
RefinementManifest parse_manifest_csv(const std::string& text,
                                      const std::string& source_name);
RefinementManifest load_manifest_csv(const std::string& path);

// Where every instance of the touched classes went. Rows and columns list
// the same classes (sorted); moves[src][dst] counts reassignments, the
// diagonal counts instances that stayed.
struct AuditReport {
  std::vector<std::string> classes;
  std::vector<std::size_t> original;
  std::vector<std::vector<std::size_t>> moves;
  std::vector<std::size_t> removed;

  std::size_t class_row(const std::string& name) const;
  std::size_t moved(const std::string& src, const std::string& dst) const;
  std::size_t final_count(const std::string& dst) const;  // column sum
  std::size_t total_removed() const;
  std::size_t total_original() const;
};

// Applies moves/removes and tallies the audit. Instances named by the
// manifest must exist in the index (any split).
std::pair<DatasetIndex, AuditReport> apply_manifest(
    const DatasetIndex& index, const RefinementManifest& manifest);

std::string audit_csv(const AuditReport& report);

// Per-class before/after counts plus the removal total, printable.
std::string refine_summary(const AuditReport& report);

struct DatasetStats {
  std::size_t n_classes = 0;
  std::size_t n_instances = 0;
  std::size_t min_count = 0;
  std::size_t max_count = 0;
  double mean_count = 0.0;
  std::vector<std::pair<std::string, std::size_t>> per_class;
};

DatasetStats dataset_stats(const DatasetIndex& index);
std::string stats_text(const DatasetStats& stats);

// True when the smallest-to-largest covariance eigenvalue ratio of the
// centered cloud falls below tau: the cloud is 2D-degenerate.
bool detect_flat(const PointCloud& cloud, double tau = 1e-4);

// Per-instance sampled-points cache: magic PSPC, a version word, the point
// count, then n x 3 little-endian 64-bit floats.
void save_point_cache(const std::string& path, const PointCloud& cloud);
PointCloud load_point_cache(const std::string& path);

struct LoaderOptions {
  std::size_t batch_size = 32;
  std::size_t n_points = 1024;
  std::uint64_t seed = 0;
  std::uint64_t epoch = 0;          // reshuffles the entry order
  AugmentConfig augment;            // applied to the train split only
  std::string cache_dir;            // empty disables the cache
};

struct Batch {
  std::vector<PointCloud> clouds;
  std::vector<int> labels;
};

// One epoch over one split: seeded shuffle, mesh to points (cached), unit
// sphere normalization, augmentation for training. The final short batch is
// kept.
class BatchStream {
 public:
  BatchStream(const DatasetIndex& index, Split split, LoaderOptions opts);

  bool next(Batch& out);
  std::size_t batch_count() const;
  std::size_t sample_count() const { return order_.size(); }

  // The loading pipeline for a single entry; shared with one-off commands.
  static PointCloud load_entry(const IndexEntry& entry,
                               const LoaderOptions& opts);

 private:
  const DatasetIndex& index_;
  Split split_;
  LoaderOptions opts_;
  std::vector<std::size_t> order_;  // entry ids, shuffled for training
  std::size_t cursor_ = 0;
};

}  // namespace pskn
