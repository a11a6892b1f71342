#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "befunet/checkpoint.hpp"
#include "befunet/config.hpp"
#include "befunet/data.hpp"
#include "befunet/gradcheck_suite.hpp"
#include "befunet/lcaf.hpp"
#include "befunet/metrics.hpp"
#include "befunet/model.hpp"
#include "befunet/train.hpp"

namespace fs = std::filesystem;
using namespace befunet;

namespace {

int cmd_gen_data(const std::string& out_dir, int n, int h, int w, int k,
                 std::uint64_t seed, double val_frac, bool fractional) {
  fs::create_directories(out_dir);
  const auto samples = generate_synthetic(n, h, w, k, seed, fractional);
  std::vector<ManifestEntry> train, val;
  const int n_val = static_cast<int>(static_cast<double>(n) * val_frac);
  for (int i = 0; i < n; ++i) {
    char img_name[32], mask_name[32];
    std::snprintf(img_name, sizeof(img_name), "img_%04d.ppm", i);
    std::snprintf(mask_name, sizeof(mask_name), "mask_%04d.pgm", i);
    write_ppm(out_dir + "/" + img_name, h, w, samples[static_cast<std::size_t>(i)].image);
    write_pgm(out_dir + "/" + mask_name, h, w, samples[static_cast<std::size_t>(i)].mask);
    // Tail of the corpus becomes the validation split.
    if (i >= n - n_val) val.push_back({img_name, mask_name});
    else train.push_back({img_name, mask_name});
  }
  write_manifest(out_dir + "/train.txt", train);
  write_manifest(out_dir + "/val.txt", val);
  std::cout << "wrote " << n << " samples to " << out_dir << " (" << train.size()
            << " train, " << val.size() << " val)\n";
  return 0;
}

template <typename T>
int run_training(RunConfig cfg) {
  if (cfg.train_manifest.empty())
    throw ConfigError("config key 'train_manifest' is required for train "
                      "(generate data with gen-data first)");
  const auto train_set = load_dataset(cfg.train_manifest);
  std::vector<Sample> val_set;
  if (!cfg.val_manifest.empty()) val_set = load_dataset(cfg.val_manifest);
  Rng rng(cfg.seed);
  Befunet<T> model(cfg.model, rng);
  std::cout << "model parameters: " << model.parameter_count() << "\n";
  fs::create_directories(cfg.out_dir);
  {
    std::ofstream f(cfg.out_dir + "/config.cfg");
    f << serialize_run_config(cfg);
  }
  const TrainResult result = train_model(model, train_set, val_set, cfg, &std::cout);
  std::cout << "best val dice: " << result.best_val_dice << "\n";
  if (!result.best_checkpoint.empty())
    std::cout << "best checkpoint: " << result.best_checkpoint << "\n";
  return 0;
}

int cmd_eval(const std::string& config_path, const std::string& ckpt,
             const std::string& manifest, const std::string& out_path) {
  RunConfig cfg = load_run_config(config_path);
  Rng rng(cfg.seed);
  Befunet<float> model(cfg.model, rng);
  load_checkpoint_into(model.parameters(), ckpt);
  const auto samples = load_dataset(manifest);
  if (samples.empty()) throw IoError("manifest lists no samples: " + manifest);
  std::vector<std::vector<std::uint8_t>> preds, gts;
  for (const auto& s : samples) {
    if (s.h != cfg.model.height || s.w != cfg.model.width)
      throw ConfigError("sample size " + std::to_string(s.h) + "x" +
                        std::to_string(s.w) + " does not match model config");
    for (const auto label : s.mask)
      if (label >= cfg.model.num_classes)
        throw ConfigError("mask label " + std::to_string(label) +
                          " exceeds configured class count " +
                          std::to_string(cfg.model.num_classes));
    preds.push_back(predict_labels(model, s));
    gts.push_back(s.mask);
  }
  const EvalReport rep = evaluate_predictions(preds, gts, cfg.model.height,
                                              cfg.model.width, cfg.model.num_classes);
  const std::string text = rep.text_table() + rep.csv_lines();
  std::cout << text;
  if (!out_path.empty()) {
    std::ofstream f(out_path);
    if (!f) throw IoError("cannot write report: " + out_path);
    f << text;
  }
  return 0;
}

int cmd_infer(const std::string& config_path, const std::string& ckpt,
              const std::string& image_path, const std::string& out_path) {
  RunConfig cfg = load_run_config(config_path);
  Rng rng(cfg.seed);
  Befunet<float> model(cfg.model, rng);
  load_checkpoint_into(model.parameters(), ckpt);
  Sample s;
  s.image = read_ppm(image_path, s.h, s.w);
  if (s.h != cfg.model.height || s.w != cfg.model.width)
    throw ConfigError("image size does not match model config");
  Ctx<float> ctx;
  const ModelOutput<float> out = model.forward(ctx, image_tensor<float>(s));
  write_pgm(out_path, s.h, s.w, argmax_labels(out.logits));
  std::cout << "wrote " << out_path << "\n";
  return 0;
}

int cmd_gradcheck(const std::string& module, double eps, double tol, int trials) {
  GradCheckOptions opt;
  opt.eps = eps;
  opt.rtol = tol;
  const auto lines = run_gradcheck_suite(module, opt, trials);
  int failures = 0;
  for (const auto& l : lines) {
    std::printf("%s %-24s max_rel=%.3g coords=%zu\n", l.pass ? "PASS" : "FAIL",
                l.name.c_str(), l.max_rel_err, l.coords);
    if (!l.pass) ++failures;
  }
  std::printf("%d/%zu checks passed\n", static_cast<int>(lines.size()) - failures,
              lines.size());
  return failures == 0 ? 0 : 1;
}

int cmd_flops(int h, int w, int c, int hl, int wl, bool verbose) {
  const AttentionCost cost = attention_cost(h, w, c, hl, wl);
  if (verbose) {
    const std::uint64_t hw = static_cast<std::uint64_t>(h) * w;
    const std::uint64_t proj = 4 * hw * static_cast<std::uint64_t>(c) * c;
    std::printf("projection term 4hwC^2      = %llu\n",
                static_cast<unsigned long long>(proj));
    std::printf("gca attention term 2(hw)^2C = %llu\n",
                static_cast<unsigned long long>(cost.gca - proj));
    std::printf("lca attention term 2hlwl*hwC = %llu\n",
                static_cast<unsigned long long>(cost.lca - proj));
  }
  std::printf("gca=%llu lca=%llu ratio=%.6g\n",
              static_cast<unsigned long long>(cost.gca),
              static_cast<unsigned long long>(cost.lca),
              static_cast<double>(cost.lca) / static_cast<double>(cost.gca));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"BEFUnet: dual-branch edge/body segmentation, from scratch"};
  app.require_subcommand(1);

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "generate a synthetic corpus");
  std::string gen_out = "data";
  int gen_n = 200, gen_h = 64, gen_w = 64, gen_k = 3;
  std::uint64_t gen_seed = 42;
  double gen_val_frac = 0.2;
  bool gen_fractional = false;
  gen->add_option("--out", gen_out, "output directory");
  gen->add_option("--n", gen_n, "sample count")->check(CLI::PositiveNumber);
  gen->add_option("--height", gen_h)->check(CLI::PositiveNumber);
  gen->add_option("--width", gen_w)->check(CLI::PositiveNumber);
  gen->add_option("--classes", gen_k)->check(CLI::Range(2, 255));
  gen->add_option("--seed", gen_seed);
  gen->add_option("--val-frac", gen_val_frac)->check(CLI::Range(0.0, 0.9));
  gen->add_flag("--fractional-edges", gen_fractional,
                "average jittered boundary drawings instead of exact edges");

  // train
  auto* train = app.add_subcommand("train", "train from a config file");
  std::string train_config, train_out, precision = "f32";
  train->add_option("--config", train_config, "run config path")->required();
  train->add_option("--out", train_out, "override out_dir");
  train->add_option("--precision", precision, "f32 or f64")
      ->check(CLI::IsMember({"f32", "f64"}));

  // eval
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a manifest");
  std::string eval_config, eval_ckpt, eval_manifest, eval_out;
  eval->add_option("--config", eval_config)->required();
  eval->add_option("--checkpoint", eval_ckpt)->required();
  eval->add_option("--manifest", eval_manifest)->required();
  eval->add_option("--out", eval_out, "also write the report here");

  // infer
  auto* infer = app.add_subcommand("infer", "segment one PPM image");
  std::string infer_config, infer_ckpt, infer_image, infer_out = "pred.pgm";
  infer->add_option("--config", infer_config)->required();
  infer->add_option("--checkpoint", infer_ckpt)->required();
  infer->add_option("--image", infer_image)->required();
  infer->add_option("--out", infer_out);

  // gradcheck
  auto* gc = app.add_subcommand("gradcheck", "finite-difference gradient suite");
  std::string gc_module = "all";
  double gc_eps = 1e-5, gc_tol = 1e-4;
  int gc_trials = 50;
  gc->add_option("--module", gc_module,
                 "all|ops|edge|body|lcaf|dlf|losses|model");
  gc->add_option("--eps", gc_eps)->check(CLI::PositiveNumber);
  gc->add_option("--tol", gc_tol)->check(CLI::PositiveNumber);
  gc->add_option("--trials", gc_trials)->check(CLI::PositiveNumber);

  // flops
  auto* flops = app.add_subcommand("flops", "attention cost model");
  flops->set_help_flag("--help", "print help");  // frees --h for the grid height
  int f_h = 14, f_w = 14, f_c = 96, f_hl = 7, f_wl = 7;
  bool f_verbose = false;
  flops->add_option("--h", f_h)->check(CLI::PositiveNumber);
  flops->add_option("--w", f_w)->check(CLI::PositiveNumber);
  flops->add_option("--c", f_c)->check(CLI::PositiveNumber);
  flops->add_option("--hl", f_hl)->check(CLI::PositiveNumber);
  flops->add_option("--wl", f_wl)->check(CLI::PositiveNumber);
  flops->add_flag("--verbose", f_verbose, "print the term split");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed())
      return cmd_gen_data(gen_out, gen_n, gen_h, gen_w, gen_k, gen_seed, gen_val_frac,
                          gen_fractional);
    if (train->parsed()) {
      RunConfig cfg = load_run_config(train_config);
      if (!train_out.empty()) cfg.out_dir = train_out;
      return precision == "f64" ? run_training<double>(cfg) : run_training<float>(cfg);
    }
    if (eval->parsed()) return cmd_eval(eval_config, eval_ckpt, eval_manifest, eval_out);
    if (infer->parsed()) return cmd_infer(infer_config, infer_ckpt, infer_image, infer_out);
    if (gc->parsed()) return cmd_gradcheck(gc_module, gc_eps, gc_tol, gc_trials);
    if (flops->parsed()) return cmd_flops(f_h, f_w, f_c, f_hl, f_wl, f_verbose);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
