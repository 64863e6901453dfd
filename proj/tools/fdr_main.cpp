// Command-line surface of the registration toolkit.
//
// Exit codes: 0 success, 1 usage error, 2 data error (I/O, format, shape),
// 3 numerical failure (failed gradient check, non-finite training).

#include <cstdio>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "fdr/fdr.hpp"

namespace fs = std::filesystem;

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitNumeric = 3;

fdr::Dims parse_dims(const std::string& text) {
  fdr::Dims dims;
  if (std::sscanf(text.c_str(), "%d,%d,%d", &dims.nu, &dims.nv, &dims.nw) == 3)
    return dims;
  int n = 0;
  if (std::sscanf(text.c_str(), "%d", &n) == 1) return {n, n, n};
  throw std::invalid_argument("--dims expects N or NU,NV,NW, got " + text);
}

fdr::ArchConfig parse_arch(const std::string& text) {
  fdr::ArchConfig arch;
  if (std::sscanf(text.c_str(), "%d,%d,%d", &arch.c, &arch.k, &arch.depth) !=
      3)
    throw std::invalid_argument("--arch expects C,K,DEPTH, got " + text);
  arch.validate();
  return arch;
}

int cmd_synth(const fdr::Dims dims, double amplitude, double sigma,
              std::uint64_t seed, int blobs, const std::string& out_dir) {
  const fdr::SyntheticPair pair =
      fdr::make_pair(dims, amplitude, sigma, seed, blobs);
  fs::create_directories(out_dir);
  const fs::path dir(out_dir);
  fdr::write_volume((dir / "fixed.dwv").string(), pair.fixed);
  fdr::write_volume((dir / "moving.dwv").string(), pair.moving);
  fdr::write_field((dir / "dvf_true.dwv").string(), pair.d_true);
  fdr::write_volume((dir / "labels_fixed.dwv").string(), pair.labels_fixed);
  fdr::write_volume((dir / "labels_moving.dwv").string(), pair.labels_moving);
  std::printf("wrote synthetic pair (dims %s, amplitude %g, sigma %g) to %s\n",
              dims.str().c_str(), amplitude, sigma, out_dir.c_str());
  return 0;
}

int cmd_register(const std::string& fixed_path, const std::string& moving_path,
                 const std::string& model_path, bool direct, int levels,
                 int iters, const std::string& config_path,
                 const std::string& out_dvf, const std::string& out_warped) {
  const fdr::Volume fixed = fdr::read_volume(fixed_path);
  const fdr::Volume moving = fdr::read_volume(moving_path);

  fdr::DisplacementField dvf;
  if (direct) {
    fdr::TrainConfig cfg = fdr::direct_config();
    if (!config_path.empty()) {
      const fdr::RunConfig rc = fdr::load_run_config(config_path);
      cfg = rc.train;
    }
    dvf = fdr::register_direct(fixed, moving, levels, iters, cfg);
  } else {
    const fdr::NetworkParams params = fdr::load_checkpoint(model_path);
    dvf = fdr::register_learned(params, fixed, moving);
  }

  fdr::write_field(out_dvf, dvf);
  if (!out_warped.empty())
    fdr::write_volume(out_warped, fdr::warp_trilinear(moving, dvf));
  std::printf("registered %s -> %s, field written to %s\n",
              moving_path.c_str(), fixed_path.c_str(), out_dvf.c_str());
  return 0;
}

std::vector<fdr::TrainSample> load_pair_dirs(const std::string& data_dir) {
  std::vector<fs::path> pair_dirs;
  for (const auto& entry : fs::directory_iterator(data_dir))
    if (entry.is_directory()) pair_dirs.push_back(entry.path());
  std::sort(pair_dirs.begin(), pair_dirs.end());
  std::vector<fdr::TrainSample> samples;
  for (const auto& dir : pair_dirs) {
    if (!fs::exists(dir / "fixed.dwv") || !fs::exists(dir / "moving.dwv"))
      continue;
    fdr::TrainSample s;
    s.fixed = fdr::read_volume((dir / "fixed.dwv").string());
    s.moving = fdr::read_volume((dir / "moving.dwv").string());
    if (fs::exists(dir / "labels_fixed.dwv") &&
        fs::exists(dir / "labels_moving.dwv")) {
      s.labels_fixed = fdr::read_volume((dir / "labels_fixed.dwv").string());
      s.labels_moving = fdr::read_volume((dir / "labels_moving.dwv").string());
    }
    samples.push_back(std::move(s));
  }
  if (samples.empty())
    throw std::invalid_argument(
        "train: no pair directories with fixed.dwv/moving.dwv under " +
        data_dir);
  return samples;
}

int cmd_train(const std::string& data_dir, const std::string& arch_text,
              const std::string& config_path, int epochs_override,
              const std::string& out_ckpt, const std::string& history_csv) {
  fdr::ArchConfig arch = parse_arch(arch_text);
  fdr::RunConfig rc;
  if (!config_path.empty()) rc = fdr::load_run_config(config_path);
  arch.additive_forwarding = rc.additive_forwarding;
  arch.residual_learning = rc.residual_learning;
  arch.deep_supervision = rc.deep_supervision;
  if (epochs_override >= 0) rc.train.epochs = epochs_override;

  const std::vector<fdr::TrainSample> samples = load_pair_dirs(data_dir);
  const fdr::TrainResult result = fdr::train(samples, arch, rc.train);

  fdr::save_checkpoint(out_ckpt, result.params);
  if (!history_csv.empty())
    fdr::write_history_csv(history_csv, result.history);
  std::printf("trained %zu iterations on %zu pairs; checkpoint at %s\n",
              result.history.rows.size(), samples.size(), out_ckpt.c_str());
  if (result.history.aborted_non_finite) {
    std::fprintf(stderr,
                 "training aborted on a non-finite loss; checkpoint holds the "
                 "last good parameters\n");
    return kExitNumeric;
  }
  return 0;
}

int cmd_evaluate(const std::string& fixed_path, const std::string& warped_path,
                 const std::string& labels_fixed_path,
                 const std::string& labels_warped_path,
                 const std::string& report_csv) {
  const fdr::Volume fixed = fdr::read_volume(fixed_path);
  const fdr::Volume warped = fdr::read_volume(warped_path);
  const std::string pair_id = fs::path(fixed_path).stem().string();

  std::vector<fdr::MetricRow> rows;
  rows.push_back({pair_id, "GLOBAL", "ncc", fdr::ncc(fixed, warped)});
  double lo = fixed.data[0], hi = fixed.data[0];
  for (double x : fixed.data) {
    lo = std::min(lo, x);
    hi = std::max(hi, x);
  }
  rows.push_back(
      {pair_id, "GLOBAL", "ssim", fdr::ssim(fixed, warped, hi - lo)});

  if (labels_fixed_path.empty() != labels_warped_path.empty())
    throw std::invalid_argument(
        "evaluate: provide both --labels-fixed and --labels-warped or "
        "neither");
  if (!labels_fixed_path.empty()) {
    const fdr::Volume lf = fdr::read_volume(labels_fixed_path);
    const fdr::Volume lw = fdr::read_volume(labels_warped_path);
    const fdr::DiceReport dice = fdr::dice_multilabel(lf, lw);
    for (const auto& [id, value] : dice.per_label)
      rows.push_back({pair_id, std::to_string(id), "dice", value});
    rows.push_back({pair_id, "GLOBAL", "dice_mean", dice.mean});
  }

  fdr::write_metric_csv(report_csv, rows);
  for (const auto& r : rows)
    std::printf("%s %s %s %.6f\n", r.pair_id.c_str(), r.label_id.c_str(),
                r.metric.c_str(), r.value);
  return 0;
}

int cmd_gradcheck(const std::string& op, std::uint64_t seed) {
  const std::vector<fdr::OpGradCheck> reports = fdr::run_gradcheck(op, seed);
  bool all_pass = true;
  for (const auto& r : reports) {
    std::printf("op=%-10s max_rel_err=%.3e tol=%.0e checked=%zu %s\n",
                r.name.c_str(), r.max_rel_err, r.tol, r.checked,
                r.pass ? "PASS" : "FAIL");
    all_pass = all_pass && r.pass;
  }
  return all_pass ? 0 : kExitNumeric;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Deformable 3D registration toolkit"};
  app.require_subcommand(1);

  auto* synth = app.add_subcommand("synth", "Generate a synthetic pair");
  std::string synth_dims = "32";
  double synth_amplitude = 3.0, synth_sigma = 4.0;
  std::uint64_t synth_seed = 0;
  int synth_blobs = 7;
  std::string synth_out;
  synth->add_option("--dims", synth_dims, "N or NU,NV,NW");
  synth->add_option("--amplitude", synth_amplitude, "max offset in voxels");
  synth->add_option("--sigma", synth_sigma, "field smoothing in voxels");
  synth->add_option("--seed", synth_seed, "generator seed");
  synth->add_option("--blobs", synth_blobs, "number of labelled blobs");
  synth->add_option("--out-dir", synth_out, "output directory")->required();

  auto* reg = app.add_subcommand("register", "Register moving onto fixed");
  std::string reg_fixed, reg_moving, reg_model, reg_config, reg_out_dvf,
      reg_out_warped;
  bool reg_direct = false;
  int reg_levels = 2, reg_iters = 300;
  reg->add_option("--fixed", reg_fixed)->required();
  reg->add_option("--moving", reg_moving)->required();
  reg->add_option("--model", reg_model, "checkpoint for learned registration");
  reg->add_flag("--direct", reg_direct, "optimize a field directly");
  reg->add_option("--levels", reg_levels, "pyramid levels (direct mode)");
  reg->add_option("--iters", reg_iters, "iterations per level (direct mode)");
  reg->add_option("--config", reg_config, "JSON run configuration");
  reg->add_option("--out-dvf", reg_out_dvf)->required();
  reg->add_option("--out-warped", reg_out_warped);

  auto* train_cmd = app.add_subcommand("train", "Train the network");
  std::string train_data, train_arch = "4,1,2", train_config, train_out,
              train_history;
  int train_epochs = -1;
  train_cmd->add_option("--data-dir", train_data)->required();
  train_cmd->add_option("--arch", train_arch, "C,K,DEPTH");
  train_cmd->add_option("--config", train_config, "JSON run configuration");
  train_cmd->add_option("--epochs", train_epochs, "override config epochs");
  train_cmd->add_option("--out", train_out, "checkpoint path")->required();
  train_cmd->add_option("--history", train_history, "history CSV path");

  auto* eval = app.add_subcommand("evaluate", "Evaluate a registration");
  std::string eval_fixed, eval_warped, eval_lf, eval_lw, eval_report;
  eval->add_option("--fixed", eval_fixed)->required();
  eval->add_option("--warped", eval_warped)->required();
  eval->add_option("--labels-fixed", eval_lf);
  eval->add_option("--labels-warped", eval_lw);
  eval->add_option("--report", eval_report, "CSV report path")->required();

  auto* gc = app.add_subcommand("gradcheck", "Finite-difference checks");
  std::string gc_op = "all";
  std::uint64_t gc_seed = 0;
  gc->add_option("--op", gc_op, "all|warp|lncc|smoothness|segloss|network");
  gc->add_option("--seed", gc_seed);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    if (synth->parsed())
      return cmd_synth(parse_dims(synth_dims), synth_amplitude, synth_sigma,
                       synth_seed, synth_blobs, synth_out);
    if (reg->parsed()) {
      if (reg_direct == !reg_model.empty()) {
        std::fprintf(stderr,
                     "register: choose exactly one of --model or --direct\n");
        return kExitUsage;
      }
      return cmd_register(reg_fixed, reg_moving, reg_model, reg_direct,
                          reg_levels, reg_iters, reg_config, reg_out_dvf,
                          reg_out_warped);
    }
    if (train_cmd->parsed())
      return cmd_train(train_data, train_arch, train_config, train_epochs,
                       train_out, train_history);
    if (eval->parsed())
      return cmd_evaluate(eval_fixed, eval_warped, eval_lf, eval_lw,
                          eval_report);
    if (gc->parsed()) return cmd_gradcheck(gc_op, gc_seed);
  } catch (const fdr::IoError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitData;
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitData;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitNumeric;
  }
  return kExitUsage;
}
