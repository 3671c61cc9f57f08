#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <mutex>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "biasloss/checkpoint.hpp"
#include "biasloss/config.hpp"
#include "biasloss/data.hpp"
#include "biasloss/diagnostics.hpp"
#include "biasloss/errors.hpp"
#include "biasloss/rng.hpp"
#include "biasloss/train.hpp"

namespace fs = std::filesystem;
using namespace biasloss;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitNumerical = 3;

std::string fmt(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

void write_text(const fs::path& path, const std::string& text) {
  write_file(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

std::vector<double> parse_list(const std::string& text, const std::string& what) {
  std::vector<double> out;
  std::stringstream ss(text);
  for (std::string item; std::getline(ss, item, ',');) {
    double v = 0.0;
    const auto r = std::from_chars(item.data(), item.data() + item.size(), v);
    if (r.ec != std::errc() || r.ptr != item.data() + item.size())
      throw ConfigError(what + ": '" + item + "' is not a number");
    out.push_back(v);
  }
  if (out.empty()) throw ConfigError(what + " must not be empty");
  return out;
}

std::vector<std::string> split_names(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  for (std::string item; std::getline(ss, item, ',');)
    if (!item.empty()) out.push_back(item);
  return out;
}

/// --config plus one flag per config key.
struct ConfigFlags {
  std::string config_path;
  std::map<std::string, std::string> values;
  std::map<std::string, CLI::Option*> options;

  void attach(CLI::App* app, bool config_required = false) {
    auto* c = app->add_option("--config", config_path, "key=value config file");
    if (config_required) c->required();
    for (const auto& key : TrainConfig::keys())
      options[key] = app->add_option("--" + key, values[key], TrainConfig::help(key));
  }

  /// Built-in defaults < base (config file or fallback) < explicit flags.
  TrainConfig resolve(const std::optional<fs::path>& fallback = std::nullopt) const {
    TrainConfig cfg;
    if (!config_path.empty()) {
      cfg = TrainConfig::load(config_path);
    } else if (fallback && fs::exists(*fallback)) {
      cfg = TrainConfig::load(*fallback);
    }
    for (const auto& [key, opt] : options)
      if (opt->count() > 0) cfg.set(key, values.at(key));
    cfg.validate();
    return cfg;
  }
};

void print_row(const RunLogRow& r) {
  std::fprintf(stderr, "epoch %zu %-5s loss %.5f top1 %.4f lr %.6g mean_weight %.4f\n", r.epoch, r.split.c_str(),
               r.loss, r.top1, r.lr, r.mean_weight);
}

int cmd_train(const ConfigFlags& flags, const std::string& out) {
  const TrainConfig cfg = flags.resolve();
  Dataset train, test;
  load_datasets(cfg, train, test);
  TrainCallbacks cb;
  cb.on_row = print_row;
  const TrainResult res = train_run(cfg, train, test, cb);
  write_run(res, cfg, out);
  std::fprintf(stderr, "best val top1 %.4f at epoch %zu; wrote %s\n", res.best_top1, res.best_epoch, out.c_str());
  return kExitOk;
}

int cmd_eval(const ConfigFlags& flags, const std::string& ckpt_path, const std::string& split) {
  const TrainConfig cfg = flags.resolve(fs::path(ckpt_path).parent_path() / "config.cfg");
  const Checkpoint ckpt = Checkpoint::load(ckpt_path);
  const Dataset ds = load_dataset(cfg.resolved_data_dir(), cfg.dataset, split,
                                  split == "train" ? cfg.train_limit : cfg.test_limit);
  const EvalResult res = evaluate(ckpt, ds, cfg);
  std::printf("loss=%s top1=%s count=%zu\n", fmt(res.loss).c_str(), fmt(res.top1).c_str(), res.count);
  return kExitOk;
}

int cmd_profile(const ConfigFlags& flags, const std::string& ckpt_path, const std::string& layers,
                const std::string& split, const std::string& out) {
  const TrainConfig cfg = flags.resolve(fs::path(ckpt_path).parent_path() / "config.cfg");
  const Checkpoint ckpt = Checkpoint::load(ckpt_path);
  MicroNet<float> net = model_from_checkpoint(ckpt, cfg);
  const Dataset ds = load_dataset(cfg.resolved_data_dir(), cfg.dataset, split,
                                  split == "train" ? cfg.train_limit : cfg.test_limit);
  const VarianceProfile prof = profile(net, ds, split_names(layers), cfg);
  if (out.empty()) {
    std::fputs(prof.to_csv().c_str(), stdout);
  } else {
    write_text(out, prof.to_csv());
  }
  return kExitOk;
}

std::string cell_name(double a, double b) { return "alpha" + fmt(a) + "_beta" + fmt(b); }

int cmd_sweep(const ConfigFlags& flags, const std::string& alphas_text, const std::string& betas_text,
              const std::string& out, std::size_t jobs) {
  TrainConfig base = flags.resolve();
  base.set("loss", "bias");
  const auto alphas = parse_list(alphas_text, "alphas");
  const auto betas = parse_list(betas_text, "betas");
  Dataset train, test;
  load_datasets(base, train, test);

  struct Cell {
    double alpha, beta;
    double top1 = 0.0, loss = 0.0;
    std::string status = "pending";
  };
  std::vector<Cell> cells;
  for (double a : alphas)
    for (double b : betas) cells.push_back({a, b});

  std::atomic<std::size_t> next{0};
  std::mutex log_mu;
  auto worker = [&] {
    for (std::size_t i = next++; i < cells.size(); i = next++) {
      Cell& c = cells[i];
      TrainConfig cfg = base;
      cfg.loss.bias.alpha = c.alpha;
      cfg.loss.bias.beta = c.beta;
      try {
        cfg.validate();
        const TrainResult res = train_run(cfg, train, test);
        write_run(res, cfg, fs::path(out) / cell_name(c.alpha, c.beta));
        const RunLogRow& last = res.log.rows.back();
        c.top1 = last.top1;
        c.loss = last.loss;
        c.status = "ok";
      } catch (const NumericalError&) {
        c.status = "numerical_error";
      } catch (const std::exception& e) {
        c.status = "error";
        std::lock_guard<std::mutex> lock(log_mu);
        std::fprintf(stderr, "cell %s failed: %s\n", cell_name(c.alpha, c.beta).c_str(), e.what());
      }
      std::lock_guard<std::mutex> lock(log_mu);
      std::fprintf(stderr, "cell alpha=%g beta=%g: top1 %.4f loss %.5f (%s)\n", c.alpha, c.beta, c.top1, c.loss,
                   c.status.c_str());
    }
  };
  std::vector<std::thread> pool;
  for (std::size_t j = 1; j < std::max<std::size_t>(1, jobs); ++j) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();

  std::string csv = "alpha,beta,final_top1,final_loss,status\n";
  std::size_t best = cells.size();
  for (std::size_t i = 0; i < cells.size(); ++i) {
    const Cell& c = cells[i];
    csv += fmt(c.alpha) + "," + fmt(c.beta) + "," + fmt(c.top1) + "," + fmt(c.loss) + "," + c.status + "\n";
    if (c.status == "ok" && (best == cells.size() || c.top1 > cells[best].top1)) best = i;
  }
  write_text(fs::path(out) / "sweep.csv", csv);
  if (best < cells.size())
    std::fprintf(stderr, "best cell alpha=%g beta=%g top1 %.4f\n", cells[best].alpha, cells[best].beta,
                 cells[best].top1);
  return kExitOk;
}

int cmd_curve(const std::string& alphas, const std::string& betas, std::size_t samples, const std::string& out) {
  const std::string csv =
      bias_curve_csv(bias_curve(parse_list(alphas, "alpha"), parse_list(betas, "beta"), samples));
  if (out.empty()) {
    std::fputs(csv.c_str(), stdout);
  } else {
    write_text(out, csv);
  }
  return kExitOk;
}

// Deterministic pixel pattern shared with tests/fixtures/make_fixtures.py.
std::uint8_t fixture_pixel(std::size_t i) { return static_cast<std::uint8_t>((i * 37 + 11) % 256); }

int cmd_fixtures(const std::string& out, std::size_t synthetic) {
  const fs::path dir(out);
  {
    Tensor<float> images({2, 1, 2, 2}, 0.0f);
    for (std::size_t i = 0; i < images.size(); ++i) images[i] = static_cast<float>(fixture_pixel(i)) / 255.0f;
    write_idx_images(dir / "tiny-images-idx3-ubyte", images);
    write_idx_labels(dir / "tiny-labels-idx1-ubyte", std::vector<int>{3, 8});
    LabeledImages rec{Tensor<float>({1, 3, 32, 32}, 0.0f), {7}};
    for (std::size_t i = 0; i < rec.images.size(); ++i) rec.images[i] = static_cast<float>(fixture_pixel(i)) / 255.0f;
    write_cifar10(dir / "one-record.bin", rec);
  }
  if (synthetic > 0) {
    // Class-dependent blobs on noise: learnable, tiny, and in the real layouts.
    auto make = [](std::size_t n, std::size_t c, std::size_t side, std::uint64_t stream) {
      LabeledImages d{Tensor<float>({n, c, side, side}, 0.0f), std::vector<int>(n)};
      CounterRng rng(20240601, RngDomain::Test, stream);
      for (std::size_t i = 0; i < n; ++i) {
        const int label = static_cast<int>(rng.below(10));
        d.labels[i] = label;
        const double cy = (0.2 + 0.06 * label) * side, cx = (0.8 - 0.06 * label) * side;
        for (std::size_t ch = 0; ch < c; ++ch)
          for (std::size_t y = 0; y < side; ++y)
            for (std::size_t x = 0; x < side; ++x) {
              const double dy = y - cy, dx = x - cx;
              const double blob = std::exp(-(dx * dx + dy * dy) / (0.02 * side * side));
              const double v = std::min(1.0, 0.8 * blob + 0.2 * rng.uniform());
              d.images[((i * c + ch) * side + y) * side + x] = static_cast<float>(std::lround(v * 255.0) / 255.0);
            }
      }
      return d;
    };
    const std::size_t n_test = std::max<std::size_t>(1, synthetic / 4);
    const auto mtrain = make(synthetic, 1, 28, 1), mtest = make(n_test, 1, 28, 2);
    write_idx_images(dir / "synthetic/mnist/train-images-idx3-ubyte", mtrain.images);
    write_idx_labels(dir / "synthetic/mnist/train-labels-idx1-ubyte", mtrain.labels);
    write_idx_images(dir / "synthetic/mnist/t10k-images-idx3-ubyte", mtest.images);
    write_idx_labels(dir / "synthetic/mnist/t10k-labels-idx1-ubyte", mtest.labels);
    const auto ctrain = make(synthetic, 3, 32, 3), ctest = make(n_test, 3, 32, 4);
    const fs::path cdir = dir / "synthetic/cifar-10-batches-bin";
    write_cifar10(cdir / "data_batch_1.bin", ctrain);
    for (int b = 2; b <= 5; ++b) write_cifar10(cdir / ("data_batch_" + std::to_string(b) + ".bin"), ctrain);
    write_cifar10(cdir / "test_batch.bin", ctest);
  }
  std::fprintf(stderr, "wrote fixtures to %s\n", out.c_str());
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Bias loss training and diagnostics for SkipblockNet-Micro"};
  app.require_subcommand(1);

  ConfigFlags train_flags, eval_flags, profile_flags, sweep_flags;
  std::string out, ckpt, layers, split = "test";
  std::string alphas = "0.1,0.3,0.5", betas = "0.1,0.3,0.5";
  std::string curve_alpha = "0.3", curve_beta = "0.3";
  std::size_t jobs = 1, samples = 101, synthetic = 0;

  auto* train = app.add_subcommand("train", "train a model; writes runlog.csv, best.ckpt, final.ckpt, config.cfg");
  train_flags.attach(train);
  train->add_option("--out", out, "output directory")->required();

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint and print loss and top1");
  eval_flags.attach(eval);
  eval->add_option("--ckpt", ckpt, "checkpoint file")->required();
  eval->add_option("--split", split, "train or test")->check(CLI::IsMember({"train", "test"}));

  auto* prof = app.add_subcommand("profile", "per-layer activation variance (avg/max/min) as CSV");
  profile_flags.attach(prof);
  prof->add_option("--ckpt", ckpt, "checkpoint file")->required();
  prof->add_option("--layers", layers, "comma-separated layer names (default: all)");
  prof->add_option("--split", split, "train or test")->check(CLI::IsMember({"train", "test"}));
  prof->add_option("--out", out, "output CSV file (default: stdout)");

  auto* sweep = app.add_subcommand("sweep", "train one bias-loss run per (alpha, beta) cell");
  sweep_flags.attach(sweep);
  sweep->add_option("--alphas", alphas, "comma-separated alpha grid");
  sweep->add_option("--betas", betas, "comma-separated beta grid");
  sweep->add_option("--out", out, "output directory")->required();
  sweep->add_option("--jobs", jobs, "cells trained concurrently")->check(CLI::PositiveNumber);

  auto* curve = app.add_subcommand("curve", "tabulate the bias function z(v) as CSV");
  curve->add_option("--alpha", curve_alpha, "comma-separated alpha values");
  curve->add_option("--beta", curve_beta, "comma-separated beta values");
  curve->add_option("--samples", samples, "points on v in [0, 1]")->check(CLI::Range(2, 1000000));
  curve->add_option("--out", out, "output CSV file (default: stdout)");

  auto* fixtures = app.add_subcommand("fixtures", "write format fixtures and optional synthetic datasets");
  fixtures->add_option("--out", out, "output directory")->required();
  fixtures->add_option("--synthetic", synthetic, "samples per synthetic training split (0: none)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (*train) return cmd_train(train_flags, out);
    if (*eval) return cmd_eval(eval_flags, ckpt, split);
    if (*prof) return cmd_profile(profile_flags, ckpt, layers, split, out);
    if (*sweep) return cmd_sweep(sweep_flags, alphas, betas, out, jobs);
    if (*curve) return cmd_curve(curve_alpha, curve_beta, samples, out);
    if (*fixtures) return cmd_fixtures(out, synthetic);
  } catch (const NumericalError& e) {
    std::fprintf(stderr, "numerical failure: %s\n", e.what());
    return kExitNumerical;
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitUsage;
  } catch (const std::filesystem::filesystem_error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitUsage;
  }
  return kExitUsage;
}
