// One PASS/FAIL line per acceptance criterion; exit status is the number of
// failures (capped at 1).

#include <chrono>
#include <cstdio>
#include <functional>
#include <iostream>
#include <numeric>
#include <random>
#include <sstream>

#include "exprnet/exprnet.hpp"
#include "oracles.hpp"
#include "synthetic.hpp"

namespace fs = std::filesystem;
using exprnet::Mode;
using exprnet::Tensor;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

int failures = 0;

void criterion(const std::string& name, double budget_seconds, const std::function<Outcome()>& body) {
  const auto start = std::chrono::steady_clock::now();
  Outcome o;
  try {
    o = body();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  if (o.pass && secs > budget_seconds) {
    o.pass = false;
    o.detail += "; over the " + fmt("%.0f", budget_seconds) + " s budget";
  }
  failures += !o.pass;
  std::printf("%s %s (%.2f s): %s\n", o.pass ? "PASS" : "FAIL", name.c_str(), secs, o.detail.c_str());
  std::fflush(stdout);
}

const std::array<std::int64_t, 7> kOriginal{218364, 22808, 12472, 10847, 150932, 101378, 40353};
const std::array<std::int64_t, 7> kSampled{43673, 39914, 32739, 32541, 37733, 33793, 40353};

Outcome table_one() {
  exprnet::Manifest m;
  for (int c = 0; c < 7; ++c) {
    for (std::int64_t i = 0; i < kOriginal[c]; ++i) {
      m.push_back({"v" + std::to_string(i % 97) + "/" + std::to_string(c) + "_" + std::to_string(i), "v" + std::to_string(i % 97), i + 1, c, 0});
    }
  }
  const auto sampled = exprnet::ClassDistribution::of(exprnet::resample(m, exprnet::SamplerConfig{}));
  std::string got;
  for (auto n : sampled.counts) got += std::to_string(n) + " ";
  got += "total " + std::to_string(sampled.total);
  return {sampled.counts == kSampled && sampled.total == 260746, got};
}

Outcome equation_one() {
  const double s = exprnet::abaw2_score(0.521, 0.33);
  // The published table lists 0.4004 next to these rounded inputs; that value
  // is not the target here.
  return {std::abs(s - 0.39303) <= 1e-9, fmt("score %.12f", s)};
}

// --- gradient suite -----------------------------------------------------

Tensor<double> leaf(exprnet::Shape shape, std::mt19937_64& gen, double lo = -1, double hi = 1) {
  auto t = oracle::random_tensor<double>(std::move(shape), gen, lo, hi);
  t.set_requires_grad(true);
  return t;
}

std::function<Tensor<double>()> projected(std::function<Tensor<double>()> op, std::mt19937_64& gen) {
  auto r = oracle::random_tensor<double>(op().shape(), gen);
  return [op, r] { return exprnet::sum(exprnet::mul(op(), r)); };
}

Outcome gradient_suite() {
  constexpr double eps = 1e-6;
  std::vector<std::pair<std::string, double>> errs;
  std::mt19937_64 gen(2024);
  for (int inst = 0; inst < 3; ++inst) {
    {
      auto x = leaf({2, 2, 5, 5}, gen), w = leaf({3, 2, 3, 3}, gen), b = leaf({3}, gen);
      const std::size_t s = 1 + inst % 2, p = inst % 2;
      errs.emplace_back("conv2d", exprnet::finite_diff_check<double>(
                                      projected([=] { return exprnet::conv2d(x, w, b, s, p); }, gen), {x, w, b}, eps));
    }
    {
      auto x = leaf({3, 2, 3, 3}, gen, -2, 2), g = leaf({2}, gen, 0.5, 1.5), b = leaf({2}, gen);
      Tensor<double> rm({2}, 0.0), rv({2}, 1.0);
      errs.emplace_back("batch_norm2d/train",
                        exprnet::finite_diff_check<double>(
                            projected([=] { return exprnet::batch_norm2d(x, g, b, rm, rv, Mode::train, 0.1, 1e-5); }, gen),
                            {x, g, b}, eps));
      Tensor<double> em({2}, std::vector<double>{0.2, -0.3}), ev({2}, std::vector<double>{0.8, 1.7});
      errs.emplace_back("batch_norm2d/eval",
                        exprnet::finite_diff_check<double>(
                            projected([=] { return exprnet::batch_norm2d(x, g, b, em, ev, Mode::eval, 0.1, 1e-5); }, gen),
                            {x, g, b}, eps));
    }
    {
      auto x = oracle::random_tensor<double>({4, 6}, gen, 0.1, 1.0);
      for (std::size_t i = 0; i < x.numel(); i += 2) x.mutable_data()[i] = -x[i];
      x.set_requires_grad(true);
      errs.emplace_back("relu", exprnet::finite_diff_check<double>(projected([=] { return exprnet::relu(x); }, gen), {x}, eps));
    }
    {
      auto x = leaf({2, 2, 7, 7}, gen);
      errs.emplace_back("max_pool2d", exprnet::finite_diff_check<double>(
                                          projected([=] { return exprnet::max_pool2d(x, 3, 2, 1); }, gen), {x}, eps));
      errs.emplace_back("global_avg_pool2d",
                        exprnet::finite_diff_check<double>(projected([=] { return exprnet::global_avg_pool2d(x); }, gen),
                                                           {x}, eps));
    }
    {
      auto x = leaf({3, 6}, gen), w = leaf({4, 6}, gen), b = leaf({4}, gen);
      errs.emplace_back("linear", exprnet::finite_diff_check<double>(
                                      projected([=] { return exprnet::linear(x, w, b); }, gen), {x, w, b}, eps));
    }
    {
      auto logits = leaf({5, 7}, gen, -3, 3);
      auto weights = oracle::random_tensor<double>({7}, gen, 0.2, 3.0);
      const std::vector<int> labels{0, 6, 3, 3, 1};
      errs.emplace_back("weighted_cross_entropy",
                        exprnet::finite_diff_check<double>(
                            [=] { return exprnet::weighted_cross_entropy(logits, labels, weights); }, {logits}, eps));
    }
    {
      auto a = leaf({3, 4}, gen), b = leaf({3, 4}, gen);
      errs.emplace_back("add/mul/scale",
                        exprnet::finite_diff_check<double>(
                            projected([=] { return exprnet::scale(exprnet::add(exprnet::mul(a, b), a), 1.7); }, gen),
                            {a, b}, eps));
    }
  }
  double worst_op = 0.0;
  std::string worst_name;
  for (const auto& [name, e] : errs) {
    if (!(e <= worst_op)) {
      worst_op = e;
      worst_name = name;
    }
  }

  exprnet::ModelConfig cfg;
  cfg.width_multiplier = exprnet::Ratio(1, 4);
  cfg.input_size = 64;
  auto model = exprnet::build_model<double>(cfg, 5);
  auto batch = oracle::random_tensor<double>({2, 3, 64, 64}, gen);
  const std::vector<int> labels{2, 5};
  Tensor<double> weights({7}, std::vector<double>{0.8, 1.2, 1.0, 1.1, 0.9, 1.0, 1.3});
  std::vector<Tensor<double>> inputs;
  for (const auto& p : model.parameters()) inputs.push_back(p.tensor);
  std::vector<exprnet::GradProbe> probes;
  for (int i = 0; i < 50; ++i) {
    const std::size_t t = std::uniform_int_distribution<std::size_t>(0, inputs.size() - 1)(gen);
    probes.push_back({t, std::uniform_int_distribution<std::size_t>(0, inputs[t].numel() - 1)(gen)});
  }
  const double model_err = exprnet::finite_diff_check<double>(
      [&] { return exprnet::weighted_cross_entropy(model.forward(batch, Mode::train), labels, weights); }, inputs, eps,
      probes);

  const bool pass = worst_op < 1e-5 && model_err < 1e-4;
  return {pass, fmt("worst per-op rel err %.3g", worst_op) + " (" + worst_name + "), " + std::to_string(errs.size()) +
                    " op checks; model rel err " + fmt("%.3g", model_err) + " over 50 parameters"};
}

// --- oracle equivalence ---------------------------------------------------

Outcome oracle_equivalence() {
  std::mt19937_64 gen(77);
  auto pick = [&](std::size_t lo, std::size_t hi) { return std::uniform_int_distribution<std::size_t>(lo, hi)(gen); };
  double conv = 0, pool = 0, lin = 0, bn = 0;
  for (int i = 0; i < 50; ++i) {
    const std::size_t n = pick(1, 3), cin = pick(1, 4), cout = pick(1, 5), k = pick(1, 4);
    const std::size_t s = pick(1, 3), p = pick(0, k / 2), h = pick(k, 10), w = pick(k, 10);
    auto x = oracle::random_tensor<double>({n, cin, h, w}, gen);
    auto wt = oracle::random_tensor<double>({cout, cin, k, k}, gen);
    auto b = oracle::random_tensor<double>({cout}, gen);
    const bool with_bias = i % 2 == 0;
    const auto got = exprnet::conv2d(x, wt, with_bias ? b : Tensor<double>(), s, p);
    conv = std::max(conv, oracle::max_abs_diff(got, oracle::conv2d(x, wt, with_bias ? &b : nullptr, s, p)));
  }
  for (int i = 0; i < 50; ++i) {
    const std::size_t k = pick(1, 4), s = pick(1, 3), p = pick(0, k / 2);
    auto x = oracle::random_tensor<double>({pick(1, 3), pick(1, 4), pick(k, 11), pick(k, 11)}, gen);
    pool = std::max(pool, oracle::max_abs_diff(exprnet::max_pool2d(x, k, s, p), oracle::max_pool2d(x, k, s, p)));
  }
  for (int i = 0; i < 50; ++i) {
    const std::size_t n = pick(1, 8), fin = pick(1, 64), fout = pick(1, 16);
    auto x = oracle::random_tensor<double>({n, fin}, gen);
    auto w = oracle::random_tensor<double>({fout, fin}, gen);
    auto b = oracle::random_tensor<double>({fout}, gen);
    lin = std::max(lin, oracle::max_abs_diff(exprnet::linear(x, w, b), oracle::linear(x, w, &b)));
  }
  for (int i = 0; i < 50;) {
    const std::size_t n = pick(1, 4), c = pick(1, 5), h = pick(1, 6), w = pick(1, 6);
    if (n * h * w < 2) continue;  // a single value per channel has no spread
    ++i;
    auto x = oracle::random_tensor<double>({n, c, h, w}, gen, -2, 3);
    auto g = oracle::random_tensor<double>({c}, gen, 0.5, 1.5), be = oracle::random_tensor<double>({c}, gen);
    auto rm = oracle::random_tensor<double>({c}, gen), rv = oracle::random_tensor<double>({c}, gen, 0.5, 2.0);
    const std::vector<double> gv(g.data().begin(), g.data().end()), bv(be.data().begin(), be.data().end());
    const std::vector<double> rmv(rm.data().begin(), rm.data().end()), rvv(rv.data().begin(), rv.data().end());
    const bool train = i % 2 == 0;
    const auto got = exprnet::batch_norm2d(x, g, be, rm, rv, train ? Mode::train : Mode::eval, 0.1, 1e-5);
    const auto ref = oracle::batch_norm2d(x, gv, bv, rmv, rvv, train, 0.1, 1e-5);
    for (std::size_t j = 0; j < got.numel(); ++j) bn = std::max(bn, std::abs(got[j] - ref.out[j]));
    for (std::size_t j = 0; j < c; ++j) {
      bn = std::max(bn, std::abs(rm[j] - ref.running_mean[j]));
      bn = std::max(bn, std::abs(rv[j] - ref.running_var[j]));
    }
  }
  const double worst = std::max({conv, pool, lin, bn});
  return {worst <= 1e-6, fmt("max abs diff conv2d %.2g", conv) + fmt(", max_pool2d %.2g", pool) +
                             fmt(", linear %.2g", lin) + fmt(", batch_norm2d %.2g", bn)};
}

// --- overfit ----------------------------------------------------------------

Outcome overfit() {
  synth::TempDir dir("overfit");
  const auto manifest = synth::write_pattern_set(dir / "images", 10, 64);
  exprnet::ModelConfig mc;
  mc.width_multiplier = exprnet::Ratio(1, 4);
  mc.input_size = 64;
  auto model = exprnet::build_model<float>(mc, 1);

  exprnet::TrainConfig tc;  // Table 2 optimizer: betas, epsilon, weight decay
  tc.learning_rate = 1e-3;
  tc.lr_step_epochs = 1000;  // constant rate over the run
  tc.batch_size = 10;
  tc.seed = 1;
  exprnet::AugmentConfig aug;
  aug.flip_probability = 0.0;
  aug.max_rotation_degrees = 0.0;

  exprnet::FileImageSource<float> source(64, true);
  const auto weights = exprnet::compute_class_weights(exprnet::ClassDistribution::of(manifest));
  exprnet::OptimizerState<float> state;
  exprnet::MetricsReport report;
  for (std::int64_t epoch = 0; epoch < 200; ++epoch) {
    exprnet::train_epoch(model, manifest, source, weights, tc, aug, epoch, state);
    if ((epoch + 1) % 5 != 0) continue;
    report = exprnet::evaluate(model, manifest, source, aug, 35).report;
    if (report.accuracy == 1.0 && report.macro_f1 == 1.0) {
      return {true, "train accuracy 1.0 and macro F1 1.0 after " + std::to_string(epoch + 1) + " epochs"};
    }
  }
  return {false, fmt("after 200 epochs accuracy %.4f", report.accuracy) + fmt(", macro F1 %.4f", report.macro_f1)};
}

Outcome schedule_and_weights() {
  const exprnet::TrainConfig tc;
  const double l14 = exprnet::lr_at_epoch(tc, 14), l15 = exprnet::lr_at_epoch(tc, 15), l30 = exprnet::lr_at_epoch(tc, 30);
  const auto w = exprnet::compute_class_weights(exprnet::ClassDistribution::from_counts(kSampled));
  const bool pass = l14 == 3e-3 && l15 == 3e-4 && l30 == 3e-5 && std::abs(w[0] - 0.85290) < 1e-4 &&
                    std::abs(w[3] - 1.14468) < 1e-4;
  return {pass, fmt("lr %.17g", l14) + fmt(" / %.17g", l15) + fmt(" / %.17g", l30) + fmt("; w_Neutral %.5f", w[0]) +
                    fmt(", w_Fear %.5f", w[3])};
}

// --- determinism --------------------------------------------------------------

Outcome determinism() {
  synth::TempDir dir("determinism");
  const auto tree = synth::write_toy_tree(dir / "data", 4, 18, 32);
  synth::write_text(dir / "toy.conf",
                    "model.width_multiplier = 1/4\nmodel.input_size = 32\ntrain.batch_size = 8\ntrain.epochs = 3\n"
                    "train.lr_step_epochs = 1\ntrain.checkpoint_every = 1\ntrain.learning_rate = 1e-3\n"
                    "split.fraction = 3/4\n");
  std::ostringstream log;
  for (const char* run : {"a", "b"}) {
    const fs::path out = dir / run;
    exprnet::cmd_prepare({tree.images, tree.annotations, out / "prep", dir / "toy.conf", 42}, log);
    exprnet::TrainOptions t;
    t.manifest = out / "prep" / "train_manifest.csv";
    t.val_manifest = out / "prep" / "val_manifest.csv";
    t.config = dir / "toy.conf";
    t.out = out / "train";
    exprnet::cmd_train(t, log);
  }
  std::size_t compared = 0;
  for (const char* sub : {"prep", "train"}) {
    std::set<std::string> names_a, names_b;
    for (const auto& e : fs::directory_iterator(dir / "a" / sub)) names_a.insert(e.path().filename().string());
    for (const auto& e : fs::directory_iterator(dir / "b" / sub)) names_b.insert(e.path().filename().string());
    if (names_a != names_b) return {false, std::string("different file sets in ") + sub};
    for (const auto& name : names_a) {
      if (exprnet::read_text_file(dir / "a" / sub / name) != exprnet::read_text_file(dir / "b" / sub / name)) {
        return {false, std::string(sub) + "/" + name + " differs between runs"};
      }
      ++compared;
    }
  }
  const bool has_ckpts = fs::exists(dir / "a" / "train" / "final.expr1") &&
                         fs::exists(dir / "a" / "train" / "checkpoint_epoch_002.expr1");
  return {has_ckpts, std::to_string(compared) + " files byte-identical (manifests, history, checkpoints)"};
}

Outcome checkpoint_round_trip() {
  exprnet::ModelConfig mc;
  mc.width_multiplier = exprnet::Ratio(1, 4);
  const auto model = exprnet::build_model<float>(mc, 8);
  synth::TempDir dir("ckpt");
  exprnet::save_checkpoint(model, dir / "a.expr1", {{"seed", "8"}});
  auto reloaded = exprnet::build_model<float>(mc, 999);
  exprnet::load_checkpoint(reloaded, dir / "a.expr1", exprnet::HeadPolicy::strict);
  exprnet::write_checkpoint(exprnet::read_checkpoint(dir / "a.expr1"), dir / "b.expr1");
  exprnet::save_checkpoint(reloaded, dir / "c.expr1", {{"seed", "8"}});
  const std::string a = exprnet::read_text_file(dir / "a.expr1");
  const bool identical = a == exprnet::read_text_file(dir / "b.expr1") && a == exprnet::read_text_file(dir / "c.expr1");

  auto ckpt = exprnet::read_checkpoint(dir / "a.expr1");
  const std::string victim = ckpt.tensors[ckpt.tensors.size() / 2].name;
  auto& t = ckpt.tensors[ckpt.tensors.size() / 2];
  exprnet::Shape shape = t.shape;
  shape[0] += 1;
  t = exprnet::CheckpointTensor::from(victim, Tensor<float>(shape, 0.5f));
  std::string message;
  try {
    exprnet::load_into(reloaded, ckpt, exprnet::HeadPolicy::strict);
  } catch (const exprnet::CheckpointError& e) {
    message = e.what();
  }
  const bool named = !message.empty() && message.find(victim) != std::string::npos;
  return {identical && named, std::string(identical ? "save->load->save byte-identical" : "bytes differ") +
                                  "; perturbed '" + victim + "' -> " + (message.empty() ? "no error" : message)};
}

Outcome metrics_properties() {
  std::mt19937_64 gen(31);
  std::uniform_int_distribution<int> cls(0, 6);
  bool tallies = true;
  double identity = 0.0, perm_gap = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = std::uniform_int_distribution<std::size_t>(1, 400)(gen);
    std::vector<int> preds(n), labels(n);
    for (std::size_t i = 0; i < n; ++i) {
      labels[i] = cls(gen);
      preds[i] = gen() % 2 ? labels[i] : cls(gen);
    }
    const auto cm = exprnet::confusion_matrix(preds, labels);
    std::array<std::array<std::int64_t, 7>, 7> counts{};
    for (std::size_t i = 0; i < n; ++i) ++counts[labels[i]][preds[i]];
    for (std::size_t a = 0; a < 7; ++a)
      for (std::size_t b = 0; b < 7; ++b) tallies = tallies && cm.at(a, b) == counts[a][b];

    const auto report = exprnet::make_report(cm);
    double weighted = 0.0;
    for (std::size_t c = 0; c < 7; ++c) weighted += double(report.support[c]) * report.per_class_f1[c];
    identity = std::max(identity, std::abs(report.weighted_f1 - weighted / double(n)));

    if (trial < 100) {
      std::array<int, 7> perm;
      std::iota(perm.begin(), perm.end(), 0);
      std::shuffle(perm.begin(), perm.end(), gen);
      std::vector<int> pp(n), pl(n);
      for (std::size_t i = 0; i < n; ++i) {
        pp[i] = perm[preds[i]];
        pl[i] = perm[labels[i]];
      }
      const auto r = exprnet::make_report(exprnet::confusion_matrix(pp, pl));
      perm_gap = std::max({perm_gap, std::abs(r.accuracy - report.accuracy), std::abs(r.macro_f1 - report.macro_f1),
                           std::abs(r.weighted_f1 - report.weighted_f1), std::abs(r.score - report.score)});
      for (std::size_t c = 0; c < 7; ++c) {
        perm_gap = std::max(perm_gap, std::abs(r.per_class_f1[perm[c]] - report.per_class_f1[c]));
      }
    }
  }
  const bool pass = tallies && identity <= 1e-12 && perm_gap <= 1e-12;
  return {pass, std::string(tallies ? "tallies exact" : "tally mismatch") + fmt("; weighted-F1 identity gap %.2g", identity) +
                    fmt("; permutation gap %.2g", perm_gap)};
}

}  // namespace

int main() {
  criterion("table1-resampling", 10, table_one);
  criterion("eq1-score", 1, equation_one);
  criterion("gradient-suite", 300, gradient_suite);
  criterion("oracle-equivalence", 120, oracle_equivalence);
  criterion("overfit-sanity", 600, overfit);
  criterion("schedule-and-weights", 1, schedule_and_weights);
  criterion("determinism", 600, determinism);
  criterion("checkpoint-round-trip", 60, checkpoint_round_trip);
  criterion("metrics-properties", 60, metrics_properties);
  std::printf("%d of 9 criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
