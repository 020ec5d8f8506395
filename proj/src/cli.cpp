#include "dfswe/cli.hpp"

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <Eigen/Core>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "dfswe/metrics.hpp"
#include "dfswe/pipeline.hpp"
#include "dfswe/storage.hpp"
#include "dfswe/training.hpp"

namespace dfswe {

namespace {

namespace fs = std::filesystem;

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitRuntime = 3;

void apply_thread_cap() {
  const char* env = std::getenv("DFSWE_NUM_THREADS");
  if (!env || !*env) return;
  char* end = nullptr;
  const long n = std::strtol(env, &end, 10);
  if (*end != '\0' || n < 1) throw ConfigError("DFSWE_NUM_THREADS must be a positive integer");
  Eigen::setNbThreads(int(n));
}

std::vector<fs::path> image_files(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw IoError("directory " + dir.string() + " does not exist");
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    auto ext = e.path().extension().string();
    for (auto& ch : ext) ch = char(std::tolower(static_cast<unsigned char>(ch)));
    if (ext == ".png" || ext == ".jpg" || ext == ".jpeg") out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

/// Grayscale secrets are replicated to the model's channel count; sizes
/// must already match.
QuantizedImage load_secret(const fs::path& path, const GlowConfig& cfg) {
  auto img = read_image(path);
  if (img.h != cfg.height || img.w != cfg.width)
    throw ShapeError("secret " + path.string() + " is " + std::to_string(img.w) + "x" +
                     std::to_string(img.h) + ", the secret model expects " +
                     std::to_string(cfg.width) + "x" + std::to_string(cfg.height));
  if (img.c == cfg.channels && img.bit_depth == 8) return img;
  if (cfg.channels != 3 && img.c != cfg.channels)
    throw ShapeError("secret " + path.string() + " has the wrong channel count");
  return prepare_image(img, cfg.height);
}

struct TacticFlags {
  bool no_pks = false;
  bool no_hdsr = false;
  bool no_dct = false;

  void add(CLI::App* cmd, bool with_pks) {
    if (with_pks) cmd->add_flag("--no-pks", no_pks, "Skip prior knowledge sampling");
    cmd->add_flag("--no-hdsr", no_hdsr, "Replace the whole stego stack instead of shallow blocks");
    cmd->add_flag("--no-dct", no_dct, "Copy secret latents without moment matching");
  }
  Tactics tactics() const { return {!no_pks, !no_hdsr, !no_dct}; }
};

// ------------------------------------------------------------------- train

struct TrainArgs {
  std::string data, out;
  int size = 32, levels = 3, steps = 8, hidden = 256, epochs = 1, batch = 32, max_steps = 0;
  int warmup = 100, checkpoint_every = 500;
  double lr = 1e-4, clip = 50.0;
  std::uint64_t seed = 0;
};

int cmd_train(const TrainArgs& a) {
  TrainConfig cfg;
  cfg.data_dir = a.data;
  cfg.out = a.out;
  cfg.image_size = a.size;
  cfg.glow = GlowConfig{3, a.size, a.size, a.levels, a.steps, a.hidden, 8};
  cfg.epochs = a.epochs;
  cfg.max_steps = a.max_steps;
  cfg.batch_size = a.batch;
  cfg.learning_rate = a.lr;
  cfg.gradient_clip_norm = a.clip;
  cfg.warmup_steps = a.warmup;
  cfg.seed = a.seed;
  cfg.checkpoint_every = a.checkpoint_every;
  const auto path = train(cfg);
  std::cout << "train: checkpoint " << path.string() << "\n";
  return kExitOk;
}

// -------------------------------------------------------------------- hide

struct HideArgs {
  std::string secret_model, stego_model, out, receipt;
  std::vector<std::string> secrets;
  bool keyless = false;
  int depth = 8;
  double temperature = 0.7;
  std::uint64_t seed = 0;
  TacticFlags flags;
};

int cmd_hide(const HideArgs& a) {
  const auto model_se = load_checkpoint(a.secret_model);
  const auto model_st = load_checkpoint(a.stego_model);
  std::vector<QuantizedImage> secrets;
  for (const auto& s : a.secrets) secrets.push_back(load_secret(s, model_se.config()));

  HideOptions opts;
  opts.tactics = a.flags.tactics();
  opts.mode = a.receipt.empty() ? ReceiptMode::keyless : ReceiptMode::receipt;
  opts.temperature = a.temperature;
  opts.seed = a.seed;
  opts.stego_bit_depth = a.depth;
  const auto result = hide(model_se, model_st, secrets, opts);
  write_image(a.out, result.stego);
  if (!a.receipt.empty()) write_receipt(a.receipt, result.receipt);

  std::cout << "hide: k=" << secrets.size() << " stego=" << a.out << " " << result.stego.w << "x"
            << result.stego.h << "x" << result.stego.c << "@" << result.stego.bit_depth
            << "bit payload=" << result.bpp << " bpp mode=" << to_string(opts.mode)
            << " tactics=" << opts.tactics.label() << "\n";
  return kExitOk;
}

// ----------------------------------------------------------------- extract

struct ExtractArgs {
  std::string secret_model, stego_model, stego, receipt, out_dir;
  int k = 1;
  TacticFlags flags;
};

int cmd_extract(const ExtractArgs& a) {
  const auto model_se = load_checkpoint(a.secret_model);
  const auto model_st = load_checkpoint(a.stego_model);
  const auto stego = read_image(a.stego);
  std::optional<HideReceipt> receipt;
  if (!a.receipt.empty()) receipt = read_receipt(a.receipt);
  HideOptions opts;
  opts.tactics = a.flags.tactics();
  const auto result =
      extract(model_se, model_st, stego, a.k, receipt ? &*receipt : nullptr, opts);
  fs::create_directories(a.out_dir);
  for (std::size_t j = 0; j < result.secrets.size(); ++j) {
    const auto path = fs::path(a.out_dir) / ("secret_" + std::to_string(j + 1) + ".png");
    write_image(path, result.secrets[j]);
    std::cout << "extract: " << path.string() << "\n";
  }
  return kExitOk;
}

// ---------------------------------------------------------------- evaluate

struct EvaluateArgs {
  std::string original, extracted, stego, report;
  std::optional<double> p_fa, p_md;
};

int cmd_evaluate(const EvaluateArgs& a) {
  const auto originals = image_files(a.original);
  const fs::path extracted_dir = a.extracted;
  std::vector<MetricReport> rows;
  std::vector<PayloadShape> shapes;
  for (const auto& o : originals) {
    const auto e = extracted_dir / o.filename();
    if (!fs::exists(e)) throw IoError("no extracted image named " + o.filename().string());
    const auto x = read_image(o);
    rows.push_back(compare(o.filename().string(), x, read_image(e)));
    shapes.push_back({x.c, x.h, x.w, x.bit_depth});
  }
  if (rows.empty()) throw IoError("no images in " + a.original);

  auto summary = summarize(rows);
  if (!a.stego.empty()) {
    const auto stegos = image_files(a.stego);
    if (stegos.empty()) throw IoError("no stego images in " + a.stego);
    const auto first = read_image(stegos.front());
    const std::size_t k = std::max<std::size_t>(1, originals.size() / stegos.size());
    shapes.resize(std::min(shapes.size(), k));
    summary.bpp = bpp(shapes, first.h, first.w);
  }
  if (a.p_fa && a.p_md) summary.pe = detection_error(*a.p_fa, *a.p_md);

  write_text_atomic(a.report, metrics_csv(rows));
  auto json_path = fs::path(a.report);
  json_path.replace_extension(".json");
  write_text_atomic(json_path, summary_json(summary));
  std::cout << "evaluate: " << rows.size() << " pairs, mean psnr " << summary.mean_psnr
            << " dB, mean ssim " << summary.mean_ssim << ", report " << a.report << "\n";
  return kExitOk;
}

// ------------------------------------------------------------------ ablate

struct AblateArgs {
  std::string secret_model, stego_model, secrets, report;
  int trials = 32;
  int depth = 8;
  bool keyless = false;
  std::uint64_t seed = 0;
};

int cmd_ablate(const AblateArgs& a) {
  const auto model_se = load_checkpoint(a.secret_model);
  const auto model_st = load_checkpoint(a.stego_model);
  std::vector<QuantizedImage> secrets;
  for (const auto& f : image_files(a.secrets))
    secrets.push_back(prepare_image(read_image(f), model_se.config().height));
  if (secrets.empty()) throw IoError("no secret images in " + a.secrets);

  AblationOptions opts;
  opts.trials = a.trials;
  opts.seed = a.seed;
  opts.stego_bit_depth = a.depth;
  opts.mode = a.keyless ? ReceiptMode::keyless : ReceiptMode::receipt;
  const auto grid = full_ablation_grid();
  const auto rows = ablate(model_se, model_st, secrets, grid, opts);
  write_text_atomic(a.report, ablation_csv(rows));
  for (const auto& r : rows)
    std::cout << "ablate: " << r.tactics.label() << " stego_bpd=" << r.stego_bpd
              << " psnr=" << r.psnr << "\n";
  return kExitOk;
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
  CLI::App app{"Steganography without embedding via two invertible flows"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "dfswe 1.0");
  bool verbose = false;
  app.add_flag("-v,--verbose", verbose, "Log progress to stderr");

  TrainArgs ta;
  auto* train_cmd = app.add_subcommand("train", "Train a flow model on an image folder");
  train_cmd->add_option("--data", ta.data, "Image directory")->required();
  train_cmd->add_option("--out", ta.out, "Output checkpoint")->required();
  train_cmd->add_option("--size", ta.size, "Square image size")->capture_default_str();
  train_cmd->add_option("--levels", ta.levels, "Flow levels L")->capture_default_str();
  train_cmd->add_option("--steps", ta.steps, "Flow steps per level K")->capture_default_str();
  train_cmd->add_option("--hidden", ta.hidden, "Coupling network width")->capture_default_str();
  train_cmd->add_option("--epochs", ta.epochs, "Training epochs")->capture_default_str();
  train_cmd->add_option("--max-steps", ta.max_steps, "Stop after this many updates (0: off)")
      ->capture_default_str();
  train_cmd->add_option("--batch", ta.batch, "Batch size")->capture_default_str();
  train_cmd->add_option("--lr", ta.lr, "Learning rate")->capture_default_str();
  train_cmd->add_option("--clip", ta.clip, "Gradient norm clip")->capture_default_str();
  train_cmd->add_option("--warmup", ta.warmup, "Linear warmup steps")->capture_default_str();
  train_cmd->add_option("--checkpoint-every", ta.checkpoint_every, "Checkpoint period in steps")
      ->capture_default_str();
  train_cmd->add_option("--seed", ta.seed, "Random seed")->capture_default_str();

  HideArgs ha;
  auto* hide_cmd = app.add_subcommand("hide", "Generate a stego image carrying secret images");
  hide_cmd->add_option("--secret-model", ha.secret_model, "Secret model checkpoint")->required();
  hide_cmd->add_option("--stego-model", ha.stego_model, "Stego model checkpoint")->required();
  hide_cmd->add_option("--secret", ha.secrets, "Secret image (repeat for several)")->required();
  hide_cmd->add_option("--out", ha.out, "Stego PNG")->required();
  auto* receipt_opt =
      hide_cmd->add_option("--receipt", ha.receipt, "Write a receipt for exact extraction");
  hide_cmd->add_flag("--keyless", ha.keyless, "Keyless mode (default)")->excludes(receipt_opt);
  hide_cmd->add_option("--stego-depth", ha.depth, "Stego bit depth")
      ->check(CLI::IsMember({8, 16}))
      ->capture_default_str();
  hide_cmd->add_option("--temperature", ha.temperature, "Sampling temperature")
      ->check(CLI::NonNegativeNumber)
      ->capture_default_str();
  hide_cmd->add_option("--seed", ha.seed, "Random seed")->capture_default_str();
  ha.flags.add(hide_cmd, true);

  ExtractArgs ea;
  auto* extract_cmd = app.add_subcommand("extract", "Recover secret images from a stego image");
  extract_cmd->add_option("--secret-model", ea.secret_model, "Secret model checkpoint")
      ->required();
  extract_cmd->add_option("--stego-model", ea.stego_model, "Stego model checkpoint")->required();
  extract_cmd->add_option("--stego", ea.stego, "Stego image")->required();
  extract_cmd->add_option("--k", ea.k, "Number of hidden secrets")
      ->required()
      ->check(CLI::PositiveNumber);
  extract_cmd->add_option("--receipt", ea.receipt, "Receipt written by hide");
  extract_cmd->add_option("--out-dir", ea.out_dir, "Output directory")->required();
  ea.flags.add(extract_cmd, false);

  EvaluateArgs va;
  auto* eval_cmd = app.add_subcommand("evaluate", "Compare original and extracted secrets");
  eval_cmd->add_option("--original", va.original, "Original secrets directory")->required();
  eval_cmd->add_option("--extracted", va.extracted, "Extracted secrets directory (same names)")
      ->required();
  eval_cmd->add_option("--stego", va.stego, "Stego directory, for the BPP summary");
  eval_cmd->add_option("--report", va.report, "CSV report; a .json summary is written beside it")
      ->required();
  eval_cmd->add_option("--p-fa", va.p_fa, "Detector false alarm rate")->check(CLI::Range(0.0, 1.0));
  eval_cmd->add_option("--p-md", va.p_md, "Detector missed detection rate")
      ->check(CLI::Range(0.0, 1.0));

  AblateArgs aa;
  auto* ablate_cmd = app.add_subcommand("ablate", "Run every tactic combination");
  ablate_cmd->add_option("--secret-model", aa.secret_model, "Secret model checkpoint")->required();
  ablate_cmd->add_option("--stego-model", aa.stego_model, "Stego model checkpoint")->required();
  ablate_cmd->add_option("--secrets", aa.secrets, "Secret image directory")->required();
  ablate_cmd->add_option("--trials", aa.trials, "Trials per combination")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  ablate_cmd->add_option("--report", aa.report, "CSV report")->required();
  ablate_cmd->add_option("--stego-depth", aa.depth, "Stego bit depth")
      ->check(CLI::IsMember({8, 16}))
      ->capture_default_str();
  ablate_cmd->add_flag("--keyless", aa.keyless, "Extract without receipts");
  ablate_cmd->add_option("--seed", aa.seed, "Random seed")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error E_USAGE: " << e.what() << "\n"
              << "run with --help for usage\n";
    return kExitUsage;
  }

  auto logger = spdlog::stderr_color_mt("dfswe");
  spdlog::set_default_logger(logger);
  spdlog::set_level(verbose || train_cmd->parsed() ? spdlog::level::info : spdlog::level::warn);

  try {
    apply_thread_cap();
    if (train_cmd->parsed()) return cmd_train(ta);
    if (hide_cmd->parsed()) return cmd_hide(ha);
    if (extract_cmd->parsed()) return cmd_extract(ea);
    if (eval_cmd->parsed()) return cmd_evaluate(va);
    if (ablate_cmd->parsed()) return cmd_ablate(aa);
  } catch (const Error& e) {
    std::cerr << "error " << e.code() << ": " << e.what() << "\n";
    return e.is_data_error() ? kExitData : kExitRuntime;
  } catch (const std::exception& e) {
    std::cerr << "error E_RUNTIME: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitUsage;
}

}  // namespace dfswe
