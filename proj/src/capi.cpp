#include "psknet.h"

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <exception>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <sstream>
#include <streambuf>
#include <string>
#include <utility>
#include <vector>

#include "core/bench.hpp"
#include "core/config.hpp"
#include "core/dataset.hpp"
#include "core/errors.hpp"
#include "core/mesh.hpp"
#include "core/model.hpp"
#include "core/training.hpp"

struct pskn_index {
  pskn::DatasetIndex index;
};

struct pskn_model {
  pskn::ModelConfig config;
  pskn::Parameters params;
};

namespace {

thread_local std::string g_last_error;

char* dup_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (out) std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

void set_out(char** slot, const std::string& value) {
  if (slot) *slot = dup_string(value);
}

template <typename F>
pskn_status guarded(F&& body) {
  try {
    body();
    return PSKN_OK;
  } catch (const pskn::ValidationError& e) {
    g_last_error = e.what();
    return PSKN_EINVAL;
  } catch (const pskn::Error& e) {
    g_last_error = e.what();
    return PSKN_ERROR;
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return PSKN_ERROR;
  }
}

void require(const void* p, const char* what) {
  if (!p) throw pskn::ValidationError(std::string("null ") + what);
}

// Splits parsed key=value options into the model half and the trainer half;
// either caller may care about only one of them.
struct Options {
  pskn::ModelConfig model = pskn::default_config();
  pskn::TrainConfig train;
};

Options parse_options(const char* text) {
  Options opts;
  if (text && *text) pskn::apply_config_text(text, opts.model, opts.train);
  return opts;
}

// Forwards each '\n'-terminated line written to an ostream to a C callback.
class LineForwardBuf : public std::streambuf {
 public:
  LineForwardBuf(pskn_progress_fn fn, void* user) : fn_(fn), user_(user) {}
  ~LineForwardBuf() override { flush_line(); }

 protected:
  int overflow(int ch) override {
    if (ch == traits_type::eof()) return 0;
    if (ch == '\n') {
      flush_line();
    } else {
      line_.push_back(static_cast<char>(ch));
    }
    return ch;
  }

 private:
  void flush_line() {
    if (fn_ && !line_.empty()) fn_(line_.c_str(), user_);
    line_.clear();
  }

  pskn_progress_fn fn_;
  void* user_;
  std::string line_;
};

pskn::PointCloud load_cloud_for_classify(const std::string& path,
                                         const pskn::TrainConfig& tcfg) {
  const std::string ext = std::filesystem::path(path).extension().string();
  if (ext == ".off") {
    const pskn::Mesh mesh = pskn::read_off_file(path);
    return pskn::sample_mesh(mesh, tcfg.n_points, tcfg.seed);
  }
  if (ext == ".pspc") return pskn::load_point_cache(path);

  std::ifstream in(path);
  if (!in) throw pskn::IoError("cannot read points file: " + path);
  pskn::PointCloud cloud;
  double v = 0;
  while (in >> v) cloud.points.push_back(v);
  if (!in.eof())
    throw pskn::ParseError("points file is not whitespace-separated numbers: " +
                           path);
  if (cloud.points.empty() || cloud.points.size() % 3 != 0)
    throw pskn::ParseError("points file must hold x y z triples: " + path);
  cloud.n = cloud.points.size() / 3;
  return cloud;
}

}  // namespace

extern "C" {

const char* pskn_version(void) { return "0.1.0"; }

const char* pskn_last_error(void) { return g_last_error.c_str(); }

void pskn_string_free(char* s) { std::free(s); }

pskn_status pskn_index_scan_root(const char* root, pskn_index** out) {
  return guarded([&] {
    require(root, "root path");
    require(out, "index output");
    *out = new pskn_index{pskn::scan_dataset_root(root)};
  });
}

pskn_status pskn_index_load_csv(const char* path, pskn_index** out) {
  return guarded([&] {
    require(path, "index path");
    require(out, "index output");
    *out = new pskn_index{pskn::load_index_csv(path)};
  });
}

pskn_status pskn_index_write_csv(const pskn_index* idx, const char* path) {
  return guarded([&] {
    require(idx, "index");
    require(path, "index path");
    pskn::write_index_csv(idx->index, path);
  });
}

pskn_status pskn_index_stats_text(const pskn_index* idx, char** out) {
  return guarded([&] {
    require(idx, "index");
    require(out, "stats output");
    set_out(out, pskn::stats_text(pskn::dataset_stats(idx->index)));
  });
}

void pskn_index_free(pskn_index* idx) { delete idx; }

pskn_status pskn_refine(const pskn_index* idx, const char* manifest_path,
                        pskn_index** refined, char** audit_csv_out,
                        char** summary_text) {
  return guarded([&] {
    require(idx, "index");
    require(manifest_path, "manifest path");
    const pskn::RefinementManifest manifest =
        pskn::load_manifest_csv(manifest_path);
    auto [out_index, report] = pskn::apply_manifest(idx->index, manifest);
    if (refined) *refined = new pskn_index{std::move(out_index)};
    set_out(audit_csv_out, pskn::audit_csv(report));
    set_out(summary_text, pskn::refine_summary(report));
  });
}

pskn_status pskn_model_create(const char* config_text, uint64_t seed,
                              pskn_model** out) {
  return guarded([&] {
    require(out, "model output");
    Options opts = parse_options(config_text);
    opts.model.validate();
    pskn::Parameters params = pskn::init_parameters(opts.model, seed);
    *out = new pskn_model{std::move(opts.model), std::move(params)};
  });
}

pskn_status pskn_model_load(const char* checkpoint_path, pskn_model** out) {
  return guarded([&] {
    require(checkpoint_path, "checkpoint path");
    require(out, "model output");
    pskn::Checkpoint ckpt = pskn::load_checkpoint(checkpoint_path);
    *out = new pskn_model{std::move(ckpt.config), std::move(ckpt.params)};
  });
}

pskn_status pskn_model_save(const pskn_model* model, const char* path) {
  return guarded([&] {
    require(model, "model");
    require(path, "checkpoint path");
    pskn::save_checkpoint(path, model->config, model->params);
  });
}

pskn_status pskn_model_parameter_count(const pskn_model* model,
                                       uint64_t* out) {
  return guarded([&] {
    require(model, "model");
    require(out, "count output");
    *out = model->params.parameter_count();
  });
}

pskn_status pskn_model_config_text(const pskn_model* model, char** out) {
  return guarded([&] {
    require(model, "model");
    require(out, "config output");
    set_out(out, pskn::model_config_text(model->config));
  });
}

void pskn_model_free(pskn_model* model) { delete model; }

pskn_status pskn_train(pskn_model* model, const pskn_index* idx,
                       const char* options_text, const char* out_dir,
                       pskn_progress_fn progress, void* user,
                       char** log_csv) {
  return guarded([&] {
    require(model, "model");
    require(idx, "index");
    const Options opts = parse_options(options_text);
    LineForwardBuf buf(progress, user);
    std::ostream stream(&buf);
    pskn::TrainResult result =
        pskn::train(idx->index, model->config, opts.train,
                    out_dir ? out_dir : "", progress ? &stream : nullptr);
    set_out(log_csv, pskn::train_log_csv(result.log));
    model->params = std::move(result.best_params);
  });
}

pskn_status pskn_evaluate(pskn_model* model, const pskn_index* idx,
                          const char* split, const char* options_text,
                          double* oa, double* macc, char** confusion_csv_out) {
  return guarded([&] {
    require(model, "model");
    require(idx, "index");
    require(split, "split");
    const Options opts = parse_options(options_text);
    pskn::EvalOptions eval_opts;
    eval_opts.batch_size = opts.train.batch_size;
    eval_opts.n_points = opts.train.n_points;
    eval_opts.seed = opts.train.seed;
    eval_opts.cache_dir = opts.train.cache_dir;
    const pskn::EvalResult result =
        pskn::evaluate(idx->index, pskn::parse_split(split), model->config,
                       model->params, eval_opts);
    if (oa) *oa = result.overall_accuracy;
    if (macc) *macc = result.mean_class_accuracy;
    set_out(confusion_csv_out,
            pskn::confusion_csv(result, idx->index.classes));
  });
}

pskn_status pskn_classify_file(pskn_model* model, const pskn_index* idx,
                               const char* path, const char* options_text,
                               char** top3_text) {
  return guarded([&] {
    require(model, "model");
    require(path, "input path");
    const Options opts = parse_options(options_text);
    pskn::PointCloud cloud = load_cloud_for_classify(path, opts.train);
    cloud = pskn::normalize_unit_sphere(cloud);
    const std::vector<double> logits =
        pskn::forward_logits(cloud, model->config, model->params);
    const std::vector<double> probs =
        pskn::softmax_rows(pskn::Tensor({1, logits.size()}, logits));

    std::vector<std::size_t> order(probs.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&probs](std::size_t a,
                                                   std::size_t b) {
      return probs[a] != probs[b] ? probs[a] > probs[b] : a < b;
    });

    auto name_of = [&](std::size_t i) {
      return idx && i < idx->index.classes.size()
                 ? idx->index.classes[i]
                 : "class" + std::to_string(i);
    };
    std::ostringstream out;
    char line[128];
    for (std::size_t rank = 0; rank < order.size() && rank < 3; ++rank) {
      std::snprintf(line, sizeof line, "%zu,%s,%.6f\n", rank + 1,
                    name_of(order[rank]).c_str(), probs[order[rank]]);
      out << line;
    }
    set_out(top3_text, out.str());
  });
}

pskn_status pskn_ablate(const pskn_index* idx, const char* options_text,
                        const char* out_dir, pskn_progress_fn progress,
                        void* user, char** augmentation_csv,
                        char** skip_csv) {
  return guarded([&] {
    require(idx, "index");
    const Options opts = parse_options(options_text);
    LineForwardBuf buf(progress, user);
    std::ostream stream(&buf);
    std::ostream* p = progress ? &stream : nullptr;
    const std::string dir = out_dir ? out_dir : "";

    const std::string aug_csv = pskn::ablation_csv(pskn::run_ablation(
        "augmentation", idx->index, opts.model, opts.train,
        dir.empty() ? "" : dir + "/augmentation", p));
    const std::string skip = pskn::ablation_csv(pskn::run_ablation(
        "skip_mode", idx->index, opts.model, opts.train,
        dir.empty() ? "" : dir + "/skip_mode", p));
    if (!dir.empty()) {
      std::filesystem::create_directories(dir);
      std::ofstream(dir + "/ablation_augmentation.csv") << aug_csv;
      std::ofstream(dir + "/ablation_skip_mode.csv") << skip;
    }
    set_out(augmentation_csv, aug_csv);
    set_out(skip_csv, skip);
  });
}

pskn_status pskn_bench(const char* options_text, char** report_text) {
  return guarded([&] {
    require(report_text, "report output");
    const Options opts = parse_options(options_text);
    set_out(report_text, pskn::bench_report(opts.model, opts.train.n_points,
                                            opts.train.seed));
  });
}

}  // extern "C"
