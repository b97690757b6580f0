#include "training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <string>
#include <utility>

#include "config.hpp"
#include "errors.hpp"

namespace pskn {
namespace {

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  out << text;
  if (!out) throw IoError("write failed: " + path);
}

std::size_t argmax_row(const std::vector<double>& data, std::size_t row,
                       std::size_t width) {
  std::size_t best = 0;
  for (std::size_t j = 1; j < width; ++j)
    if (data[row * width + j] > data[row * width + best]) best = j;
  return best;
}

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i)
    out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i)
    out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f64(std::string& out, double d) {
  std::uint64_t v = 0;
  std::memcpy(&v, &d, 8);
  put_u64(out, v);
}

void put_str(std::string& out, const std::string& s) {
  put_u64(out, s.size());
  out += s;
}

// Cursor over a loaded checkpoint; any read past the end is a truncation.
struct Reader {
  const std::string& buf;
  const std::string& path;
  std::size_t pos = 0;

  const char* take(std::size_t n) {
    if (pos + n > buf.size())
      throw CheckpointError("truncated checkpoint: " + path);
    const char* at = buf.data() + pos;
    pos += n;
    return at;
  }

  std::uint32_t u32() {
    const unsigned char* b = reinterpret_cast<const unsigned char*>(take(4));
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
    return v;
  }

  std::uint64_t u64() {
    const unsigned char* b = reinterpret_cast<const unsigned char*>(take(8));
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
  }

  double f64() {
    const std::uint64_t v = u64();
    double d = 0;
    std::memcpy(&d, &v, 8);
    return d;
  }

  std::string str() {
    const std::uint64_t n = u64();
    if (n > buf.size()) throw CheckpointError("truncated checkpoint: " + path);
    return std::string(take(static_cast<std::size_t>(n)),
                       static_cast<std::size_t>(n));
  }

  std::vector<double> f64s(std::size_t n) {
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = f64();
    return out;
  }
};

constexpr char kMagic[4] = {'P', 'S', 'K', 'N'};
constexpr std::uint32_t kVersion = 1;

}  // namespace

void TrainConfig::validate() const {
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  if (epochs == 0) throw ConfigError("epochs must be positive");
  if (!(learning_rate >= 0))
    throw ConfigError("learning_rate must be non-negative");
  if (!(beta1 >= 0 && beta1 < 1))
    throw ConfigError("beta1 must lie in [0, 1)");
  if (!(beta2 >= 0 && beta2 < 1))
    throw ConfigError("beta2 must lie in [0, 1)");
  if (!(epsilon > 0)) throw ConfigError("epsilon must be positive");
  if (!(min_learning_rate >= 0))
    throw ConfigError("min_learning_rate must be non-negative");
  if (n_points == 0) throw ConfigError("n_points must be positive");
  augment.validate();
}

double learning_rate_at(const TrainConfig& cfg, std::size_t epoch) {
  if (!cfg.cosine_decay || cfg.epochs <= 1) return cfg.learning_rate;
  const double lo = std::min(cfg.min_learning_rate, cfg.learning_rate);
  double t = static_cast<double>(epoch) / static_cast<double>(cfg.epochs - 1);
  t = std::min(t, 1.0);
  return lo + 0.5 * (cfg.learning_rate - lo) * (1.0 + std::cos(M_PI * t));
}

AdamState make_adam_state(const Parameters& params) {
  AdamState state;
  state.m.reserve(params.tensors.size());
  state.v.reserve(params.tensors.size());
  for (const auto& [name, tensor] : params.tensors) {
    state.m.emplace_back(tensor.numel(), 0.0);
    state.v.emplace_back(tensor.numel(), 0.0);
  }
  return state;
}

void adam_step(Parameters& params, AdamState& state, const TrainConfig& cfg,
               double learning_rate) {
  if (state.m.size() != params.tensors.size() ||
      state.v.size() != params.tensors.size())
    throw ShapeError("adam state tracks " + std::to_string(state.m.size()) +
                     " tensors, parameters have " +
                     std::to_string(params.tensors.size()));
  ++state.t;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < params.tensors.size(); ++i) {
    auto& [name, tensor] = params.tensors[i];
    std::vector<double>& m = state.m[i];
    std::vector<double>& v = state.v[i];
    std::vector<double>& w = tensor.data();
    if (m.size() != w.size() || v.size() != w.size())
      throw ShapeError("adam state shape mismatch for " + name);
    const double* g = tensor.has_grad() ? tensor.grad().data() : nullptr;
    for (std::size_t k = 0; k < w.size(); ++k) {
      const double gk = g ? g[k] : 0.0;
      m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * gk;
      v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * gk * gk;
      const double mhat = m[k] / bc1;
      const double vhat = v[k] / bc2;
      w[k] -= learning_rate * mhat / (std::sqrt(vhat) + cfg.epsilon);
    }
  }
}

EvalResult metrics_from_confusion(
    std::vector<std::vector<std::size_t>> confusion) {
  const std::size_t k = confusion.size();
  for (const auto& row : confusion)
    if (row.size() != k)
      throw ShapeError("confusion matrix must be square, row has " +
                       std::to_string(row.size()) + " of " +
                       std::to_string(k) + " columns");
  std::size_t total = 0, diagonal = 0, seen = 0;
  double recall_sum = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    std::size_t row_sum = 0;
    for (std::size_t j = 0; j < k; ++j) row_sum += confusion[i][j];
    total += row_sum;
    diagonal += confusion[i][i];
    if (row_sum) {
      ++seen;
      recall_sum += static_cast<double>(confusion[i][i]) /
                    static_cast<double>(row_sum);
    }
  }
  EvalResult result;
  result.confusion = std::move(confusion);
  result.overall_accuracy =
      total ? static_cast<double>(diagonal) / static_cast<double>(total) : 0.0;
  result.mean_class_accuracy =
      seen ? recall_sum / static_cast<double>(seen) : 0.0;
  return result;
}

std::string confusion_csv(const EvalResult& result,
                          const std::vector<std::string>& classes) {
  auto name_of = [&classes](std::size_t i) {
    return i < classes.size() ? classes[i] : "class" + std::to_string(i);
  };
  const std::size_t k = result.confusion.size();
  std::string out = "class";
  for (std::size_t j = 0; j < k; ++j) out += ',' + name_of(j);
  out += '\n';
  for (std::size_t i = 0; i < k; ++i) {
    out += name_of(i);
    for (std::size_t j = 0; j < k; ++j)
      out += ',' + std::to_string(result.confusion[i][j]);
    out += '\n';
  }
  return out;
}

EvalResult evaluate(const DatasetIndex& index, Split split,
                    const ModelConfig& mcfg, Parameters& params,
                    const EvalOptions& opts) {
  LoaderOptions lo;
  lo.batch_size = opts.batch_size;
  lo.n_points = opts.n_points;
  lo.seed = opts.seed;
  lo.cache_dir = opts.cache_dir;
  BatchStream stream(index, split, lo);
  std::vector<std::vector<std::size_t>> confusion(
      mcfg.n_classes, std::vector<std::size_t>(mcfg.n_classes, 0));
  Batch batch;
  Rng rng(0);  // eval mode draws nothing
  while (stream.next(batch)) {
    std::vector<ForwardPlan> plans;
    plans.reserve(batch.clouds.size());
    for (const PointCloud& cloud : batch.clouds)
      plans.push_back(plan_forward(cloud, mcfg));
    Graph g(false);
    const Tensor logits =
        forward_batch(g, batch.clouds, plans, mcfg, params, false, rng);
    const std::vector<double>& z = logits.data();
    for (std::size_t b = 0; b < batch.clouds.size(); ++b) {
      const int label = batch.labels[b];
      if (label < 0 || label >= static_cast<int>(mcfg.n_classes))
        throw ValueError("label " + std::to_string(label) +
                         " outside the model's " +
                         std::to_string(mcfg.n_classes) + " classes");
      ++confusion[static_cast<std::size_t>(label)]
                 [argmax_row(z, b, mcfg.n_classes)];
    }
  }
  return metrics_from_confusion(std::move(confusion));
}

std::string train_log_csv(const std::vector<EpochLog>& log) {
  std::string out = "epoch,train_loss,train_oa,eval_oa,eval_macc\n";
  char line[160];
  for (const EpochLog& row : log) {
    std::snprintf(line, sizeof line, "%zu,%.8f,%.6f,%.6f,%.6f\n", row.epoch,
                  row.train_loss, row.train_oa, row.eval_oa, row.eval_macc);
    out += line;
  }
  return out;
}

Parameters clone_parameters(const Parameters& params) {
  Parameters copy;
  copy.tensors.reserve(params.tensors.size());
  copy.stats.reserve(params.stats.size());
  for (const auto& [name, tensor] : params.tensors)
    copy.tensors.emplace_back(
        name, Tensor(tensor.shape(), tensor.data(), tensor.requires_grad()));
  for (const auto& [name, stats] : params.stats)
    copy.stats.emplace_back(name, stats);
  return copy;
}

TrainResult train(const DatasetIndex& index, const ModelConfig& mcfg,
                  const TrainConfig& tcfg, const std::string& out_dir,
                  std::ostream* progress) {
  mcfg.validate();
  tcfg.validate();
  if (index.classes.size() > mcfg.n_classes)
    throw ConfigError("dataset has " + std::to_string(index.classes.size()) +
                      " classes but the model head emits " +
                      std::to_string(mcfg.n_classes));

  Parameters params = init_parameters(mcfg, tcfg.seed);
  AdamState state = make_adam_state(params);
  Rng drop_rng(mix_seed(tcfg.seed, 1));

  bool has_test = false;
  for (const IndexEntry& entry : index.entries)
    has_test = has_test || entry.split == Split::kTest;
  const Split eval_split = has_test ? Split::kTest : Split::kTrain;
  EvalOptions eval_opts;
  eval_opts.batch_size = tcfg.batch_size;
  eval_opts.n_points = tcfg.n_points;
  eval_opts.seed = tcfg.seed;
  eval_opts.cache_dir = tcfg.cache_dir;

  TrainResult result;
  double best_oa = -1.0;
  for (std::size_t epoch = 0; epoch < tcfg.epochs; ++epoch) {
    const double lr = learning_rate_at(tcfg, epoch);
    LoaderOptions lo;
    lo.batch_size = tcfg.batch_size;
    lo.n_points = tcfg.n_points;
    lo.seed = tcfg.seed;
    lo.epoch = epoch;
    lo.augment = tcfg.augment;
    lo.cache_dir = tcfg.cache_dir;
    BatchStream stream(index, Split::kTrain, lo);
    Rng plan_rng(mix_seed(mix_seed(tcfg.seed, 2), epoch));

    double loss_sum = 0.0;
    std::size_t correct = 0, total = 0;
    Batch batch;
    while (stream.next(batch)) {
      std::vector<ForwardPlan> plans;
      plans.reserve(batch.clouds.size());
      for (const PointCloud& cloud : batch.clouds)
        plans.push_back(plan_forward(cloud, mcfg, plan_rng));
      Graph g;
      const Tensor logits =
          forward_batch(g, batch.clouds, plans, mcfg, params, true, drop_rng);
      const Tensor loss = g.softmax_cross_entropy(logits, batch.labels);
      g.backward(loss);
      adam_step(params, state, tcfg, lr);
      loss_sum += loss.item() * static_cast<double>(batch.clouds.size());
      const std::vector<double>& z = logits.data();
      for (std::size_t b = 0; b < batch.clouds.size(); ++b) {
        if (argmax_row(z, b, mcfg.n_classes) ==
            static_cast<std::size_t>(batch.labels[b]))
          ++correct;
        ++total;
      }
    }

    EpochLog row;
    row.epoch = epoch;
    row.train_loss = loss_sum / static_cast<double>(total);
    row.train_oa = static_cast<double>(correct) / static_cast<double>(total);
    EvalResult eval = evaluate(index, eval_split, mcfg, params, eval_opts);
    row.eval_oa = eval.overall_accuracy;
    row.eval_macc = eval.mean_class_accuracy;
    result.log.push_back(row);
    if (eval.overall_accuracy > best_oa) {
      best_oa = eval.overall_accuracy;
      result.best_epoch = epoch;
      result.best_params = clone_parameters(params);
      result.best_eval = std::move(eval);
    }
    if (progress) {
      char line[200];
      std::snprintf(line, sizeof line,
                    "epoch %zu/%zu lr %.6f loss %.4f train_oa %.4f eval_oa "
                    "%.4f eval_macc %.4f",
                    epoch + 1, tcfg.epochs, lr, row.train_loss, row.train_oa,
                    row.eval_oa, row.eval_macc);
      *progress << line << std::endl;
    }
  }
  result.params = std::move(params);

  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    write_text_file(out_dir + "/train_log.csv", train_log_csv(result.log));
    save_checkpoint(out_dir + "/best.ckpt", mcfg, result.best_params);
    save_checkpoint(out_dir + "/last.ckpt", mcfg, result.params);
  }
  return result;
}

void save_checkpoint(const std::string& path, const ModelConfig& cfg,
                     const Parameters& params) {
  std::string buf(kMagic, sizeof kMagic);
  put_u32(buf, kVersion);
  put_str(buf, model_config_text(cfg));
  put_u64(buf, params.tensors.size());
  for (const auto& [name, tensor] : params.tensors) {
    put_str(buf, name);
    put_u64(buf, tensor.rank());
    for (std::size_t d = 0; d < tensor.rank(); ++d) put_u64(buf, tensor.dim(d));
    for (double v : tensor.data()) put_f64(buf, v);
  }
  put_u64(buf, params.stats.size());
  for (const auto& [name, stats] : params.stats) {
    put_str(buf, name);
    put_u64(buf, stats.mean.size());
    for (double v : stats.mean) put_f64(buf, v);
    for (double v : stats.var) put_f64(buf, v);
  }
  write_text_file(path, buf);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read checkpoint: " + path);
  std::string buf((std::istreambuf_iterator<char>(in)),
                  std::istreambuf_iterator<char>());
  Reader r{buf, path};
  if (buf.size() < 4 || std::memcmp(r.take(4), kMagic, 4) != 0)
    throw CheckpointError("not a checkpoint (bad magic): " + path);
  const std::uint32_t version = r.u32();
  if (version != kVersion)
    throw CheckpointError("unsupported checkpoint version " +
                          std::to_string(version) + ": " + path);

  Checkpoint ckpt;
  const std::string cfg_text = r.str();
  try {
    ckpt.config = parse_model_config(cfg_text);
  } catch (const ConfigError& e) {
    throw CheckpointError("checkpoint carries an invalid config (" +
                          std::string(e.what()) + "): " + path);
  }

  const std::uint64_t n_tensors = r.u64();
  for (std::uint64_t i = 0; i < n_tensors; ++i) {
    const std::string name = r.str();
    const std::uint64_t rank = r.u64();
    if (rank > 8) throw CheckpointError("corrupt tensor rank: " + path);
    Shape shape(rank);
    std::size_t numel = 1;
    for (std::uint64_t d = 0; d < rank; ++d) {
      shape[d] = static_cast<std::size_t>(r.u64());
      if (shape[d] == 0 || shape[d] > buf.size())
        throw CheckpointError("corrupt tensor shape: " + path);
      numel *= shape[d];
    }
    ckpt.params.tensors.emplace_back(
        name, Tensor(std::move(shape), r.f64s(numel), true));
  }
  const std::uint64_t n_stats = r.u64();
  for (std::uint64_t i = 0; i < n_stats; ++i) {
    const std::string name = r.str();
    const std::uint64_t width = r.u64();
    if (width > buf.size()) throw CheckpointError("corrupt stats: " + path);
    RunningStats stats;
    stats.mean = r.f64s(static_cast<std::size_t>(width));
    stats.var = r.f64s(static_cast<std::size_t>(width));
    ckpt.params.stats.emplace_back(name, std::move(stats));
  }
  if (r.pos != buf.size())
    throw CheckpointError("trailing bytes after checkpoint payload: " + path);

  // The stored tensors must be exactly the set the config declares.
  const Parameters expected = init_parameters(ckpt.config, 0);
  if (expected.tensors.size() != ckpt.params.tensors.size() ||
      expected.stats.size() != ckpt.params.stats.size())
    throw CheckpointError("checkpoint tensors do not match its config: " +
                          path);
  for (std::size_t i = 0; i < expected.tensors.size(); ++i) {
    const auto& [want_name, want] = expected.tensors[i];
    const auto& [got_name, got] = ckpt.params.tensors[i];
    if (want_name != got_name || want.shape() != got.shape())
      throw CheckpointError("checkpoint tensor '" + got_name +
                            "' does not match its config: " + path);
  }
  for (std::size_t i = 0; i < expected.stats.size(); ++i) {
    if (expected.stats[i].first != ckpt.params.stats[i].first ||
        expected.stats[i].second.mean.size() !=
            ckpt.params.stats[i].second.mean.size())
      throw CheckpointError("checkpoint stats do not match its config: " +
                            path);
  }
  return ckpt;
}

std::vector<AblationRow> run_ablation(const std::string& kind,
                                      const DatasetIndex& index,
                                      const ModelConfig& mcfg,
                                      const TrainConfig& tcfg,
                                      const std::string& out_dir,
                                      std::ostream* progress) {
  std::vector<AblationRow> rows;
  auto run_one = [&](const std::string& label, const ModelConfig& mc,
                     const TrainConfig& tc) {
    if (progress) *progress << kind << " variant: " << label << std::endl;
    const std::string dir = out_dir.empty() ? "" : out_dir + "/" + label;
    TrainResult res = train(index, mc, tc, dir, progress);
    rows.push_back({label, std::move(res.best_eval)});
  };

  if (kind == "augmentation") {
    for (AugmentMode mode :
         {AugmentMode::kNone, AugmentMode::kAll,
          AugmentMode::kAnisotropicScaling, AugmentMode::kJitter,
          AugmentMode::kRotation, AugmentMode::kTranslation}) {
      TrainConfig tc = tcfg;
      tc.augment.mode = mode;
      run_one(augment_mode_name(mode), mcfg, tc);
    }
  } else if (kind == "skip_mode") {
    for (SkipMode mode : {SkipMode::kConcatenation, SkipMode::kAddition}) {
      run_one(skip_mode_name(mode), with_skip_mode(mcfg, mode), tcfg);
    }
  } else {
    throw ValueError("unknown ablation kind '" + kind +
                     "' (want augmentation or skip_mode)");
  }
  return rows;
}

std::string ablation_csv(const std::vector<AblationRow>& rows) {
  std::string out = "mode,oa,macc\n";
  char line[128];
  for (const AblationRow& row : rows) {
    std::snprintf(line, sizeof line, "%s,%.2f,%.2f\n", row.label.c_str(),
                  100.0 * row.eval.overall_accuracy,
                  100.0 * row.eval.mean_class_accuracy);
    out += line;
  }
  return out;
}

}  // namespace pskn
