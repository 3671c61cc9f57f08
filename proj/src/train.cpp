#include "biasloss/train.hpp"

#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <sstream>

#include "biasloss/errors.hpp"
#include "biasloss/losses.hpp"

namespace biasloss {

namespace {

std::string fmt(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

double parse_num(const std::string& s) {
  double v = 0.0;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size()) throw FormatError("malformed number '" + s + "' in run log");
  return v;
}

std::size_t count_correct(const Tensor<float>& logits, std::span<const int> labels) {
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const float* row = logits.ptr() + i * k;
    std::size_t best = 0;
    for (std::size_t j = 1; j < k; ++j)
      if (row[j] > row[best]) best = j;
    if (static_cast<int>(best) == labels[i]) ++correct;
  }
  return correct;
}

Normalization dataset_normalization(const TrainConfig& cfg) { return normalization_for(cfg.dataset); }

}  // namespace

template <typename T>
void sgd_step(std::vector<Parameter<T>>& params, const std::vector<const Tensor<T>*>& grads,
              std::vector<Tensor<T>>& buffers, double lr, double momentum, double weight_decay) {
  if (grads.size() != params.size())
    throw ContractError("sgd_step: " + std::to_string(grads.size()) + " gradients for " +
                        std::to_string(params.size()) + " parameters");
  if (buffers.empty()) {
    for (const auto& p : params) buffers.emplace_back(p.value.shape(), T{0});
  }
  if (buffers.size() != params.size()) throw ContractError("sgd_step: momentum buffer count mismatch");
  const T m = static_cast<T>(momentum), eta = static_cast<T>(lr);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor<T>& theta = params[i].value;
    Tensor<T>& buf = buffers[i];
    const Tensor<T>* g = grads[i];
    if (buf.shape() != theta.shape() || (g && g->shape() != theta.shape()))
      throw ContractError("sgd_step: shape mismatch for '" + params[i].name + "'");
    const T wd = params[i].weight_decay ? static_cast<T>(weight_decay) : T{0};
    T* th = theta.ptr();
    T* b = buf.ptr();
    const T* gp = g ? g->ptr() : nullptr;
    for (std::size_t j = 0; j < theta.size(); ++j) {
      const T grad = gp ? gp[j] : T{0};
      b[j] = m * b[j] + grad + wd * th[j];
      th[j] -= eta * b[j];
    }
  }
}

void VarianceStats::add(const VarianceRecord& rec, const BiasLossConfig& cfg) {
  for (std::size_t i = 0; i < rec.size(); ++i) {
    raw_sum += rec.raw[i];
    scaled_sum += rec.scaled[i];
    weight_sum += rec.weight[i];
  }
  clamped_lo += rec.clamped_low(cfg);
  clamped_hi += rec.clamped_high(cfg);
  count += rec.size();
}

std::string RunLog::to_csv() const {
  std::string out = std::string(kHeader) + "\n";
  for (const auto& r : rows) {
    out += std::to_string(r.epoch) + "," + r.split + "," + fmt(r.loss) + "," + fmt(r.top1) + "," + fmt(r.lr) + "," +
           fmt(r.mean_raw_variance) + "," + fmt(r.mean_scaled_variance) + "," + fmt(r.mean_weight) + "," +
           fmt(r.frac_clamped_lo) + "," + fmt(r.frac_clamped_hi) + "," + fmt(r.wall_seconds) + "\n";
  }
  return out;
}

RunLog RunLog::parse_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != kHeader) throw FormatError("run log header mismatch");
  RunLog log;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::istringstream ls(line);
    for (std::string cell; std::getline(ls, cell, ',');) f.push_back(cell);
    if (f.size() != 11) throw FormatError("run log row has " + std::to_string(f.size()) + " fields");
    RunLogRow r;
    r.epoch = static_cast<std::size_t>(parse_num(f[0]));
    r.split = f[1];
    r.loss = parse_num(f[2]);
    r.top1 = parse_num(f[3]);
    r.lr = parse_num(f[4]);
    r.mean_raw_variance = parse_num(f[5]);
    r.mean_scaled_variance = parse_num(f[6]);
    r.mean_weight = parse_num(f[7]);
    r.frac_clamped_lo = parse_num(f[8]);
    r.frac_clamped_hi = parse_num(f[9]);
    r.wall_seconds = parse_num(f[10]);
    log.rows.push_back(r);
  }
  return log;
}

void RunLog::save(const std::filesystem::path& path) const {
  const std::string csv = to_csv();
  write_file(path, std::span(reinterpret_cast<const std::uint8_t*>(csv.data()), csv.size()));
}

RunLog RunLog::load(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  return parse_csv(std::string(bytes.begin(), bytes.end()));
}

BiasLossConfig stats_config(const TrainConfig& cfg) {
  BiasLossConfig c = cfg.loss.bias;
  if (cfg.loss.kind != LossKind::Bias) {
    c.alpha = 0.0;
    c.beta = 0.0;
  }
  return c;
}

EvalResult evaluate(MicroNet<float>& net, const Dataset& ds, const TrainConfig& cfg) {
  BatchOptions opts;
  opts.batch_size = cfg.eval_batch_size;
  opts.normalize = dataset_normalization(cfg);
  BatchStream stream(ds, opts);
  const BiasLossConfig scfg = stats_config(cfg);
  EvalResult res;
  double loss_sum = 0.0;
  std::size_t correct = 0;
  while (auto batch = stream.next()) {
    Graph<float> g;
    const NodeId in = g.input("images");
    g.set_value(in, std::move(batch->images));
    const ModelOutputs out = net.build(g, in, Mode::Eval, nullptr, false);
    const LossNodes ln = build_loss(g, out.logits, out.features, batch->labels, cfg.loss);
    const double loss = g.forward(ln.loss).item();
    const std::size_t n = batch->labels.size();
    loss_sum += loss * static_cast<double>(n);
    correct += count_correct(g.value(out.logits), batch->labels);
    res.stats.add(variance_record(g.value(out.features), scfg), scfg);
    res.count += n;
  }
  if (res.count) {
    res.loss = loss_sum / static_cast<double>(res.count);
    res.top1 = static_cast<double>(correct) / static_cast<double>(res.count);
  }
  return res;
}

MicroNet<float> model_from_checkpoint(const Checkpoint& ckpt, const TrainConfig& cfg) {
  if (ckpt.config_hash != cfg.hash()) {
    char buf[96];
    std::snprintf(buf, sizeof buf, "checkpoint config hash %016llx does not match config %016llx",
                  static_cast<unsigned long long>(ckpt.config_hash), static_cast<unsigned long long>(cfg.hash()));
    throw CheckpointError(buf);
  }
  MicroNet<float> net(cfg.model_spec(), cfg.seed);
  load_into_model(ckpt, net);
  return net;
}

EvalResult evaluate(const Checkpoint& ckpt, const Dataset& ds, const TrainConfig& cfg) {
  MicroNet<float> net = model_from_checkpoint(ckpt, cfg);
  return evaluate(net, ds, cfg);
}

TrainResult train_run(const TrainConfig& cfg, const Dataset& train, const Dataset& val,
                      const TrainCallbacks& callbacks) {
  cfg.validate();
  const MicroNetSpec spec = cfg.model_spec();
  if (train.size() == 0) throw ConfigError("training set is empty");
  if (train.channels() != spec.in_channels || train.height() != spec.in_h || train.width() != spec.in_w)
    throw ConfigError("dataset geometry does not match the model input");

  MicroNet<float> net(spec, cfg.seed);
  const auto schedule = cfg.resolved_schedule();
  const BiasLossConfig scfg = stats_config(cfg);
  const std::uint64_t hash = cfg.hash();
  const auto t0 = std::chrono::steady_clock::now();
  auto wall = [&] {
    if (!cfg.log_wall_time) return 0.0;
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  };

  AugmentSpec aug;
  aug.hflip = cfg.resolved_hflip();
  aug.rotate_lo = -cfg.rotate_deg;
  aug.rotate_hi = cfg.rotate_deg;
  aug.normalize = dataset_normalization(cfg);

  TrainResult result;
  std::vector<Tensor<float>> buffers;
  std::uint64_t step = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = lr_at(epoch, cfg.lr0, schedule);
    BatchOptions opts;
    opts.batch_size = cfg.batch_size;
    opts.shuffle = true;
    opts.seed = cfg.seed;
    opts.epoch = epoch;
    opts.augment = aug;
    opts.normalize = aug.normalize;
    opts.prefetch = cfg.prefetch;
    BatchStream stream(train, opts);

    VarianceStats stats;
    double loss_sum = 0.0;
    std::size_t correct = 0, seen = 0, batch_index = 0;
    while (auto batch = stream.next()) {
      const std::size_t n = batch->labels.size();
      Graph<float> g;
      const NodeId in = g.input("images");
      g.set_value(in, std::move(batch->images));
      const Tensor<float> mask = dropout_mask<float>(net.dropout_mask_shape(n), spec.dropout, cfg.seed, step);
      const ModelOutputs out = net.build(g, in, Mode::Train, &mask, true);
      const LossNodes ln = build_loss(g, out.logits, out.features, batch->labels, cfg.loss);
      const double loss = g.forward(ln.loss).item();
      const VarianceRecord rec = variance_record(g.value(out.features), scfg);
      if (!std::isfinite(loss)) {
        throw NumericalError("non-finite loss at epoch " + std::to_string(epoch) + " batch " +
                             std::to_string(batch_index) + "\n" + rec.describe());
      }
      const GradStore<float> grads = g.backward(ln.loss);
      std::vector<const Tensor<float>*> gp(out.params.size(), nullptr);
      for (std::size_t i = 0; i < out.params.size(); ++i)
        if (out.params[i] && grads.contains(*out.params[i])) gp[i] = &grads.at(*out.params[i]);
      sgd_step(net.parameters().params(), gp, buffers, lr, cfg.momentum, cfg.weight_decay);

      stats.add(rec, scfg);
      loss_sum += loss * static_cast<double>(n);
      correct += count_correct(g.value(out.logits), batch->labels);
      seen += n;
      if (callbacks.on_batch) callbacks.on_batch(epoch, batch_index, loss);
      ++batch_index;
      ++step;
    }

    RunLogRow tr;
    tr.epoch = epoch;
    tr.split = "train";
    tr.loss = loss_sum / static_cast<double>(seen);
    tr.top1 = static_cast<double>(correct) / static_cast<double>(seen);
    tr.lr = lr;
    tr.mean_raw_variance = stats.mean_raw();
    tr.mean_scaled_variance = stats.mean_scaled();
    tr.mean_weight = stats.mean_weight();
    tr.frac_clamped_lo = stats.frac_lo();
    tr.frac_clamped_hi = stats.frac_hi();
    tr.wall_seconds = wall();
    result.log.rows.push_back(tr);
    if (callbacks.on_row) callbacks.on_row(tr);

    const EvalResult ev = evaluate(net, val, cfg);
    RunLogRow vr;
    vr.epoch = epoch;
    vr.split = "val";
    vr.loss = ev.loss;
    vr.top1 = ev.top1;
    vr.lr = lr;
    vr.mean_raw_variance = ev.stats.mean_raw();
    vr.mean_scaled_variance = ev.stats.mean_scaled();
    vr.mean_weight = ev.stats.mean_weight();
    vr.frac_clamped_lo = ev.stats.frac_lo();
    vr.frac_clamped_hi = ev.stats.frac_hi();
    vr.wall_seconds = wall();
    result.log.rows.push_back(vr);
    if (callbacks.on_row) callbacks.on_row(vr);

    if (ev.top1 > result.best_top1) {
      result.best_top1 = ev.top1;
      result.best_epoch = epoch;
      result.best = checkpoint_from_model(net, hash);
    }
  }
  result.final = checkpoint_from_model(net, hash);
  return result;
}

void load_datasets(const TrainConfig& cfg, Dataset& train, Dataset& test) {
  const auto root = cfg.resolved_data_dir();
  train = load_dataset(root, cfg.dataset, "train", cfg.train_limit);
  test = load_dataset(root, cfg.dataset, "test", cfg.test_limit);
}

void write_run(const TrainResult& result, const TrainConfig& cfg, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  result.log.save(dir / "runlog.csv");
  result.best.save(dir / "best.ckpt");
  result.final.save(dir / "final.ckpt");
  const std::string text = cfg.serialize();
  write_file(dir / "config.cfg", std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

template void sgd_step<float>(std::vector<Parameter<float>>&, const std::vector<const Tensor<float>*>&,
                              std::vector<Tensor<float>>&, double, double, double);
template void sgd_step<double>(std::vector<Parameter<double>>&, const std::vector<const Tensor<double>*>&,
                               std::vector<Tensor<double>>&, double, double, double);

}  // namespace biasloss
