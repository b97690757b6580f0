// psknet: dataset refinement, training, evaluation, and benchmarks for the
// point-cloud classifier, all through the shared-library C interface.
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include "psknet.h"

namespace {

struct IndexDeleter {
  void operator()(pskn_index* p) const { pskn_index_free(p); }
};
struct ModelDeleter {
  void operator()(pskn_model* p) const { pskn_model_free(p); }
};
using IndexPtr = std::unique_ptr<pskn_index, IndexDeleter>;
using ModelPtr = std::unique_ptr<pskn_model, ModelDeleter>;

struct OwnedString {
  char* s = nullptr;
  ~OwnedString() { pskn_string_free(s); }
  std::string str() const { return s ? s : ""; }
};

int fail(pskn_status status) {
  std::cerr << "error: " << pskn_last_error() << "\n";
  return static_cast<int>(status);
}

void print_progress(const char* line, void*) {
  std::cout << line << "\n" << std::flush;
}

// Flags shared by the pipeline subcommands. Only flags the user actually
// passed become key=value lines, so config-file values survive unless
// overridden.
struct Flags {
  std::string root;
  std::string index_csv;
  std::string config_path;
  std::string out_dir;
  std::string augment;
  std::string skip_mode;
  std::string split = "test";
  std::uint64_t seed = 0;
  std::size_t epochs = 0;
  std::size_t batch_size = 0;
  std::size_t n_points = 0;
  double lr = 0;
};

void add_dataset_flags(CLI::App* cmd, Flags& f) {
  cmd->add_option("--root", f.root, "dataset root: <class>/<split>/*.off")
      ->check(CLI::ExistingDirectory);
  cmd->add_option("--index", f.index_csv, "dataset index CSV")
      ->check(CLI::ExistingFile);
}

void add_config_flags(CLI::App* cmd, Flags& f) {
  cmd->add_option("--config", f.config_path, "key=value config file")
      ->check(CLI::ExistingFile);
  cmd->add_option("--seed", f.seed, "rng seed");
  cmd->add_option("--n-points", f.n_points, "points sampled per cloud");
}

void add_train_flags(CLI::App* cmd, Flags& f) {
  cmd->add_option("--augment", f.augment,
                  "none|rotation|jitter|anisotropic_scaling|translation|all");
  cmd->add_option("--skip-mode", f.skip_mode, "concat|add");
  cmd->add_option("--epochs", f.epochs, "training epochs");
  cmd->add_option("--batch-size", f.batch_size, "batch size");
  cmd->add_option("--lr", f.lr, "peak learning rate");
}

// Layers explicit flags after the config file so flags win.
std::string options_text(const CLI::App* cmd, const Flags& f) {
  std::string text;
  if (!f.config_path.empty()) {
    std::ifstream in(f.config_path, std::ios::binary);
    std::ostringstream buf;
    buf << in.rdbuf();
    text = buf.str();
    if (!text.empty() && text.back() != '\n') text += '\n';
  }
  auto add = [&](const char* key, const std::string& value) {
    text += key;
    text += '=';
    text += value;
    text += '\n';
  };
  auto passed = [&](const std::string& name) {
    const CLI::Option* opt = cmd->get_option_no_throw(name);
    return opt && opt->count() > 0;
  };
  if (passed("--seed")) add("seed", std::to_string(f.seed));
  if (passed("--n-points")) add("n_points", std::to_string(f.n_points));
  if (passed("--augment")) add("augment", f.augment);
  if (passed("--skip-mode")) add("skip_mode", f.skip_mode);
  if (passed("--epochs")) add("epochs", std::to_string(f.epochs));
  if (passed("--batch-size"))
    add("batch_size", std::to_string(f.batch_size));
  if (passed("--lr")) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", f.lr);
    add("learning_rate", buf);
  }
  return text;
}

// Exactly one dataset source; scan a root or load an index CSV.
int open_index(const Flags& f, IndexPtr& out, bool required = true) {
  if (!f.root.empty() && !f.index_csv.empty()) {
    std::cerr << "error: give --root or --index, not both\n";
    return 2;
  }
  if (f.root.empty() && f.index_csv.empty()) {
    if (!required) return 0;
    std::cerr << "error: give --root or --index\n";
    return 2;
  }
  pskn_index* raw = nullptr;
  const pskn_status status =
      f.root.empty() ? pskn_index_load_csv(f.index_csv.c_str(), &raw)
                     : pskn_index_scan_root(f.root.c_str(), &raw);
  if (status != PSKN_OK) return fail(status);
  out.reset(raw);
  return 0;
}

int write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  out << content;
  if (!out) {
    std::cerr << "error: cannot write " << path << "\n";
    return 1;
  }
  return 0;
}

int cmd_refine(const Flags& f, const std::string& manifest) {
  IndexPtr index;
  if (int rc = open_index(f, index)) return rc;
  pskn_index* refined_raw = nullptr;
  OwnedString audit, summary;
  const pskn_status status = pskn_refine(index.get(), manifest.c_str(),
                                         &refined_raw, &audit.s, &summary.s);
  if (status != PSKN_OK) return fail(status);
  IndexPtr refined(refined_raw);

  std::filesystem::create_directories(f.out_dir);
  const std::string index_path = f.out_dir + "/refined_index.csv";
  if (pskn_index_write_csv(refined.get(), index_path.c_str()) != PSKN_OK)
    return fail(PSKN_ERROR);
  if (int rc = write_file(f.out_dir + "/audit.csv", audit.str())) return rc;
  std::cout << summary.str();
  return 0;
}

int cmd_stats(const Flags& f) {
  IndexPtr index;
  if (int rc = open_index(f, index)) return rc;
  OwnedString text;
  const pskn_status status = pskn_index_stats_text(index.get(), &text.s);
  if (status != PSKN_OK) return fail(status);
  std::cout << text.str();
  return 0;
}

int cmd_train(const CLI::App* cmd, const Flags& f) {
  IndexPtr index;
  if (int rc = open_index(f, index)) return rc;
  const std::string options = options_text(cmd, f);

  pskn_model* model_raw = nullptr;
  pskn_status status = pskn_model_create(options.c_str(), f.seed, &model_raw);
  if (status != PSKN_OK) return fail(status);
  ModelPtr model(model_raw);

  status = pskn_train(model.get(), index.get(), options.c_str(),
                      f.out_dir.c_str(), print_progress, nullptr, nullptr);
  if (status != PSKN_OK) return fail(status);
  std::cout << "wrote " << f.out_dir << "/train_log.csv, best.ckpt, last.ckpt"
            << "\n";
  return 0;
}

int load_or_create_model(const std::string& checkpoint,
                         const std::string& options, std::uint64_t seed,
                         ModelPtr& out) {
  pskn_model* raw = nullptr;
  const pskn_status status =
      checkpoint.empty() ? pskn_model_create(options.c_str(), seed, &raw)
                         : pskn_model_load(checkpoint.c_str(), &raw);
  if (status != PSKN_OK) return fail(status);
  out.reset(raw);
  return 0;
}

int cmd_eval(const CLI::App* cmd, const Flags& f,
             const std::string& checkpoint) {
  IndexPtr index;
  if (int rc = open_index(f, index)) return rc;
  const std::string options = options_text(cmd, f);
  ModelPtr model;
  if (int rc = load_or_create_model(checkpoint, options, f.seed, model))
    return rc;

  double oa = 0, macc = 0;
  OwnedString confusion;
  const pskn_status status =
      pskn_evaluate(model.get(), index.get(), f.split.c_str(), options.c_str(),
                    &oa, &macc, &confusion.s);
  if (status != PSKN_OK) return fail(status);

  char line[64];
  std::snprintf(line, sizeof line, "oa %.6f\nmacc %.6f\n", oa, macc);
  std::cout << line;
  std::filesystem::create_directories(f.out_dir);
  return write_file(f.out_dir + "/confusion.csv", confusion.str());
}

int cmd_classify(const CLI::App* cmd, const Flags& f,
                 const std::string& checkpoint, const std::string& input) {
  IndexPtr index;
  if (int rc = open_index(f, index, /*required=*/false)) return rc;
  const std::string options = options_text(cmd, f);
  ModelPtr model;
  if (int rc = load_or_create_model(checkpoint, options, f.seed, model))
    return rc;

  OwnedString top3;
  const pskn_status status = pskn_classify_file(
      model.get(), index.get(), input.c_str(), options.c_str(), &top3.s);
  if (status != PSKN_OK) return fail(status);
  std::cout << top3.str();
  return 0;
}

int cmd_ablate(const CLI::App* cmd, const Flags& f) {
  IndexPtr index;
  if (int rc = open_index(f, index)) return rc;
  const std::string options = options_text(cmd, f);
  OwnedString augmentation, skip;
  const pskn_status status =
      pskn_ablate(index.get(), options.c_str(), f.out_dir.c_str(),
                  print_progress, nullptr, &augmentation.s, &skip.s);
  if (status != PSKN_OK) return fail(status);
  std::cout << "augmentation\n"
            << augmentation.str() << "\nskip_mode\n"
            << skip.str();
  return 0;
}

int cmd_bench(const CLI::App* cmd, const Flags& f) {
  const std::string options = options_text(cmd, f);
  OwnedString report;
  const pskn_status status = pskn_bench(options.c_str(), &report.s);
  if (status != PSKN_OK) return fail(status);
  std::cout << report.str();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"point-cloud classification pipeline"};
  app.require_subcommand(1);
  app.set_version_flag("--version", pskn_version());

  Flags f;
  std::string manifest, checkpoint, input;

  CLI::App* refine =
      app.add_subcommand("refine", "apply a refinement manifest");
  add_dataset_flags(refine, f);
  refine->add_option("--manifest", manifest, "refinement manifest CSV")
      ->required()
      ->check(CLI::ExistingFile);
  refine->add_option("--out", f.out_dir, "output directory")->required();

  CLI::App* stats = app.add_subcommand("stats", "per-class dataset counts");
  add_dataset_flags(stats, f);

  CLI::App* train = app.add_subcommand("train", "train a classifier");
  add_dataset_flags(train, f);
  add_config_flags(train, f);
  add_train_flags(train, f);
  train->add_option("--out", f.out_dir, "output directory")->required();

  CLI::App* eval = app.add_subcommand("eval", "evaluate one split");
  eval->add_option("checkpoint", checkpoint, "trained checkpoint");
  add_dataset_flags(eval, f);
  add_config_flags(eval, f);
  eval->add_option("--batch-size", f.batch_size, "batch size");
  eval->add_option("--split", f.split, "train|test");
  eval->add_option("--out", f.out_dir, "output directory")->required();

  CLI::App* classify =
      app.add_subcommand("classify", "classify one mesh or point file");
  classify->add_option("checkpoint", checkpoint, "trained checkpoint")
      ->required();
  classify->add_option("input", input, "OFF mesh, point cache, or x y z text")
      ->required()
      ->check(CLI::ExistingFile);
  add_dataset_flags(classify, f);
  add_config_flags(classify, f);

  CLI::App* ablate =
      app.add_subcommand("ablate", "augmentation and skip-mode sweeps");
  add_dataset_flags(ablate, f);
  add_config_flags(ablate, f);
  add_train_flags(ablate, f);
  ablate->add_option("--out", f.out_dir, "output directory")->required();

  CLI::App* bench =
      app.add_subcommand("bench", "kernel and forward microbenchmarks");
  add_config_flags(bench, f);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  if (*refine) return cmd_refine(f, manifest);
  if (*stats) return cmd_stats(f);
  if (*train) return cmd_train(train, f);
  if (*eval) return cmd_eval(eval, f, checkpoint);
  if (*classify) return cmd_classify(classify, f, checkpoint, input);
  if (*ablate) return cmd_ablate(ablate, f);
  if (*bench) return cmd_bench(bench, f);
  return 2;
}
