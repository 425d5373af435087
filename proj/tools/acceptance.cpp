// Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any fails.

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <random>
#include <string>

#include "../tests/oracles.hpp"
#include "mvflow/mvflow.hpp"

using namespace mvflow;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

template <class T = double>
Tensor<T> uniform(const Shape& s, std::mt19937_64& rng, double lo, double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor<T> t(s);
  for (auto& v : t.vec()) v = static_cast<T>(u(rng));
  return t;
}

double max_abs_diff(const Tensor<double>& a, const Tensor<double>& b) {
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

struct Outcome {
  bool pass;
  std::string detail;
};

int failures = 0;

void report(const std::string& name, const std::function<Outcome()>& check) {
  const auto t0 = Clock::now();
  Outcome o;
  try {
    o = check();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  if (!o.pass) ++failures;
  std::printf("%s %-22s %s (%.1f s)\n", o.pass ? "PASS" : "FAIL", name.c_str(), o.detail.c_str(), seconds_since(t0));
  std::fflush(stdout);
}

std::string fmt(const char* f, double a, double b = 0, double c = 0, double d = 0) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), f, a, b, c, d);
  return buf;
}

// ---- aggregation oracles ----------------------------------------------------------

Outcome oracle_equivalence() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(11);
  std::uniform_int_distribution<int> size(2, 16), radius(1, 3), chans(1, 8);
  double worst = 0;
  for (int i = 0; i < 200; ++i) {
    const int h = size(rng), w = size(rng), c = chans(rng), d = radius(rng);
    auto q = uniform({c, h, w}, rng, -2, 2), k = uniform({c, h, w}, rng, -2, 2);
    auto v1 = uniform({2, h, w}, rng, -8, 8), v2 = uniform({2, h, w}, rng, -8, 8);
    auto c1 = uniform({1, h, w}, rng, 0, 1), c2 = uniform({1, h, w}, rng, 0, 1);
    // Oracle inputs are the float-rounded values the float API sees.
    auto qf = q.cast<float>(), kf = k.cast<float>();
    FlowField v1f(v1.cast<float>()), v2f(v2.cast<float>());
    auto c1f = c1.cast<float>(), c2f = c2.cast<float>();
    q = qf.cast<double>(), k = kf.cast<double>(), v1 = v1f.t.cast<double>(), v2 = v2f.t.cast<double>();
    c1 = c1f.cast<double>(), c2 = c2f.cast<double>();
    const auto single = window_aggregate(qf, kf, v1f, c1f, d);
    worst = std::max(worst, max_abs_diff(single.t.cast<double>(), mvtest::brute_aggregate(q, k, {&v1}, {&c1}, d, 1e-8)));
    const auto fused = fused_aggregate(qf, kf, v1f, v2f, c1f, c2f, d);
    worst = std::max(worst,
                     max_abs_diff(fused.t.cast<double>(), mvtest::brute_aggregate(q, k, {&v1, &v2}, {&c1, &c2}, d, 1e-8)));
  }
  const double t = seconds_since(t0);
  return {worst <= 1e-5 && t < 60, fmt("200 instances x 2 ops, max abs err %.2e, %.2f s", worst, t)};
}

// ---- gradients --------------------------------------------------------------------

Var<double> probe_loss(Var<double> out, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return sum(mul(out, out.tape->constant(uniform(out.value().shape(), rng, -1, 1))));
}

struct BlockCheck {
  std::string name;
  ParamSet<double> params;
  LossClosure fn;
};

Outcome gradient_suite() {
  const ModelConfig mc;
  const MvcmConfig& c = mc.mvcm;
  const RefinerConfig& rc = mc.refiner;
  std::mt19937_64 rng(21);
  const int S = 8;
  std::vector<BlockCheck> blocks;

  auto stack_block = [&](const std::string& name, const ConvStack& stack, int cin) {
    ParamSet<double> p;
    init_stack(p, stack, rng);
    const auto x = uniform({cin, S, S}, rng, -1, 1);
    blocks.push_back({name, p, [stack, x](Tape<double>& t, const ParamSet<double>& q) {
                        return probe_loss(apply_stack(Bound<double>{t, q}, stack, t.constant(x)), 1);
                      }});
  };
  stack_block("encoder", encoder_stack("mvcm.enc_a", c), 3);
  stack_block("credibility", credibility_stack("mvcm.ceb", c, 4, 1), 4);
  stack_block("warm_credibility", warm_credibility_stack(c), 5);
  stack_block("feature_net", feature_stack(rc), 3);
  stack_block("update", update_stack(rc), corr_channels(rc) + 2 + rc.feature_dim);
  {
    ParamSet<double> p;
    p.add("q", uniform({4, S, S}, rng, -2, 2));
    p.add("k", uniform({4, S, S}, rng, -2, 2));
    p.add("v_mv", uniform({2, S, S}, rng, -4, 4));
    p.add("v_prj", uniform({2, S, S}, rng, -4, 4));
    p.add("c_mv", uniform({1, S, S}, rng, 0.05, 1));
    p.add("c_prj", uniform({1, S, S}, rng, 0.05, 1));
    blocks.push_back({"aggregate", p, [&](Tape<double>& t, const ParamSet<double>& q) {
                        auto g = [&](const char* n) { return t.param(n, q.at(n)); };
                        return probe_loss(aggregate<double>(g("q"), g("k"), {{g("v_mv"), g("c_mv")}, {g("v_prj"), g("c_prj")}},
                                                            c.window_radius, c.eps),
                                          2);
                      }});
  }
  {
    ParamSet<double> p;
    p.add("f1", uniform({8, S, S}, rng, -1, 1));
    p.add("f2", uniform({8, S, S}, rng, -1, 1));
    p.add("flow", uniform({2, S, S}, rng, -2.5, 2.5));
    blocks.push_back({"correlation", p, [&](Tape<double>& t, const ParamSet<double>& q) {
                        auto g = [&](const char* n) { return t.param(n, q.at(n)); };
                        return probe_loss(local_correlation(g("f1"), g("f2"), g("flow"), rc.corr_radius), 3);
                      }});
  }
  {
    SynthConfig sc;
    sc.width = sc.height = S;
    sc.block_size = mc.scale();
    const Sample s = synth_sample(5, sc);
    const int R = mc.scale();
    blocks.push_back({"pipeline_2iter", init_model_params(mc, 5).cast<double>(),
                      [s, mc, R](Tape<double>& t, const ParamSet<double>& q) {
                        auto o = model_forward(Bound<double>{t, q}, s, InitStrategy::mvcm_warm_start, 2, mc);
                        std::vector<Var<double>> flows{*o.mvcm_full};
                        for (auto& f : o.refined.coarse) flows.push_back(upsample_bilinear(f, R, double(R)));
                        return sequence_loss(flows, s.gt_flow.t.cast<double>(), s.gt_valid.t.cast<double>(), 0.8);
                      }});
  }

  bool pass = true;
  std::string detail;
  std::size_t checked = 0, excluded = 0;
  for (const auto& b : blocks) {
    GradCheckOptions opt;
    opt.max_checks_per_param = 16;
    opt.seed = 7;
    const auto r = grad_check(b.fn, b.params, opt);
    for (const auto& p : r.params) checked += p.checked, excluded += p.excluded;
    pass = pass && r.passed;
    detail += b.name + fmt("=%.1e ", r.max_rel_error);
  }
  return {pass, detail + fmt("(tol 1e-6, %.0f elements checked, %.0f excluded at kinks)", double(checked), double(excluded))};
}

// ---- reductions -------------------------------------------------------------------

Outcome reductions() {
  std::mt19937_64 rng(31);
  std::uniform_int_distribution<int> size(3, 12), radius(1, 3);
  // One-hot credibility at the probe pixel reproduces V there.
  double onehot = 0;
  for (int i = 0; i < 50; ++i) {
    const int h = size(rng), w = size(rng), d = radius(rng);
    const int py = std::uniform_int_distribution<int>(0, h - 1)(rng), px = std::uniform_int_distribution<int>(0, w - 1)(rng);
    auto v = uniform({2, h, w}, rng, -8, 8);
    Tensor<double> cr(Shape{1, h, w});
    cr.at(0, py, px) = 1;
    auto out = aggregate_forward<double>(uniform({4, h, w}, rng, -2, 2), uniform({4, h, w}, rng, -2, 2), {{&v, &cr}}, d,
                                         1e-30)
                   .flow;
    for (int ch = 0; ch < 2; ++ch) onehot = std::max(onehot, std::abs(out.at(ch, py, px) - v.at(ch, py, px)));
  }
  // Zero projected credibility: the two-source result is the one-source result, bit for bit.
  bool exact = true;
  for (int i = 0; i < 50; ++i) {
    const int h = size(rng), w = size(rng), d = radius(rng);
    auto q = uniform<float>({4, h, w}, rng, -2, 2), k = uniform<float>({4, h, w}, rng, -2, 2);
    FlowField vm(uniform<float>({2, h, w}, rng, -8, 8)), vp(uniform<float>({2, h, w}, rng, -8, 8));
    auto cm = uniform<float>({1, h, w}, rng, 0, 1);
    const auto a = fused_aggregate(q, k, vm, vp, cm, Tensor<float>(Shape{1, h, w}), d);
    const auto b = window_aggregate(q, k, vm, cm, d);
    exact = exact && a.t == b.t;
  }
  // Convex hull over the union of both value windows.
  int hull_violations = 0;
  for (int i = 0; i < 1000; ++i) {
    const int h = size(rng), w = size(rng), d = radius(rng);
    auto q = uniform({4, h, w}, rng, -3, 3), k = uniform({4, h, w}, rng, -3, 3);
    auto v1 = uniform({2, h, w}, rng, -8, 8), v2 = uniform({2, h, w}, rng, -8, 8);
    auto c1 = uniform({1, h, w}, rng, 0, 1), c2 = uniform({1, h, w}, rng, 0, 1);
    const bool two = i % 2;
    std::vector<AggregateSource<double>> src{{&v1, &c1}};
    if (two) src.push_back({&v2, &c2});
    const auto out = aggregate_forward<double>(q, k, src, d, 0.0).flow;
    for (int ch = 0; ch < 2; ++ch)
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
          double lo = 1e300, hi = -1e300;
          for (int yy = std::max(0, y - d); yy <= std::min(h - 1, y + d); ++yy)
            for (int xx = std::max(0, x - d); xx <= std::min(w - 1, x + d); ++xx) {
              lo = std::min(lo, v1.at(ch, yy, xx)), hi = std::max(hi, v1.at(ch, yy, xx));
              if (two) lo = std::min(lo, v2.at(ch, yy, xx)), hi = std::max(hi, v2.at(ch, yy, xx));
            }
          const double o = out.at(ch, y, x);
          if (o < lo - 1e-12 || o > hi + 1e-12) ++hull_violations;
        }
  }
  return {onehot < 1e-12 && exact && hull_violations == 0,
          fmt("one-hot max err %.1e; zero C_prj bitwise ", onehot) + (exact ? "ok" : "DIFFERS") +
              fmt("; hull violations %.0f over 1000 instances", double(hull_violations))};
}

// ---- forward warp -----------------------------------------------------------------

Outcome warp_conservation() {
  std::mt19937_64 rng(41);
  std::uniform_real_distribution<double> u(0, 1);
  std::uniform_int_distribution<int> size(4, 48);
  double worst = 0;
  for (int i = 0; i < 100; ++i) {
    const int h = size(rng), w = size(rng);
    FlowField f(w, h);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        f.u(y, x) = static_cast<float>(u(rng) * (w - 1) - x);
        f.v(y, x) = static_cast<float>(u(rng) * (h - 1) - y);
      }
    const auto r = forward_warp(f);
    double total = 0;
    for (float v : r.weight.data()) total += v;
    worst = std::max(worst, std::abs(total - double(h) * w));
  }
  bool identity = true;
  for (int i = 0; i < 20; ++i) {
    FlowField zero(size(rng), size(rng));
    const auto r = forward_warp(zero);
    identity = identity && r.flow.t == zero.t;
    for (float v : r.mask.t.data()) identity = identity && v == 1.0f;
  }
  return {worst <= 1e-3 && identity,
          fmt("max |mass - H*W| %.2e over 100 fields; zero-flow identity %s", worst) + (identity ? "ok" : "BROKEN")};
}

// ---- metrics ----------------------------------------------------------------------

Outcome metric_fidelity() {
  std::mt19937_64 rng(51);
  std::uniform_real_distribution<double> u(0, 1);
  double worst_aepe = 0, worst_f1 = 0;
  for (int i = 0; i < 100; ++i) {
    const int h = 3 + i % 17, w = 5 + i % 13;
    FlowField pred(uniform<float>({2, h, w}, rng, -20, 20)), gt(uniform<float>({2, h, w}, rng, -20, 20));
    Mask valid(w, h);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) valid(y, x) = u(rng) < 0.7 ? 1.0f : 0.0f;
    valid(0, 0) = 1.0f;
    double se = 0, out = 0, n = 0;
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        if (valid(y, x) == 0) continue;
        const double du = double(pred.u(y, x)) - gt.u(y, x), dv = double(pred.v(y, x)) - gt.v(y, x);
        const double epe = std::sqrt(du * du + dv * dv);
        const double mag = std::sqrt(double(gt.u(y, x)) * gt.u(y, x) + double(gt.v(y, x)) * gt.v(y, x));
        se += epe;
        out += (epe > 3.0 && epe > 0.05 * mag) ? 1 : 0;
        n += 1;
      }
    worst_aepe = std::max(worst_aepe, std::abs(aepe(pred, gt, valid) - se / n));
    worst_f1 = std::max(worst_f1, std::abs(f1_outlier(pred, gt, valid) - out / n));
  }
  FlowField p1(1, 1), g1(1, 1);
  g1.u(0, 0) = 3, g1.v(0, 0) = 4;
  const bool pyth = aepe(p1, g1, Mask(1, 1, 1.0f)) == 5.0;
  FlowField p2(2, 1), g2(2, 1);
  g2.u(0, 0) = 10, p2.u(0, 0) = 14;
  g2.u(0, 1) = 100, p2.u(0, 1) = 104;
  const bool kitti = is_outlier(4, 10) && !is_outlier(4, 100) && !is_outlier(3, 0) && !is_outlier(5, 100) &&
                     f1_outlier(p2, g2, Mask(2, 1, 1.0f)) == 0.5 && f1_outlier(g2, g2, Mask(2, 1, 1.0f)) == 0.0;
  return {worst_aepe <= 1e-6 && worst_f1 <= 1e-6 && pyth && kitti,
          fmt("AEPE err %.1e, F1 err %.1e vs loop oracle; 3-4-5 ", worst_aepe, worst_f1) + (pyth ? "ok" : "WRONG") +
              "; KITTI boundaries " + (kitti ? "ok" : "WRONG")};
}

// ---- formats ----------------------------------------------------------------------

Outcome format_round_trips(const fs::path& data, const Checkpoint* trained) {
  const auto flo = detail::read_file_bytes(data / "golden.flo");
  const auto mvs = detail::read_file_bytes(data / "golden.mvs");
  const auto ckpt = detail::read_file_bytes(data / "golden.ckpt");
  const bool flo_ok = encode_flo(decode_flo(flo)) == flo;
  const bool mvs_ok = encode_sidecars(decode_sidecars(mvs)) == mvs;
  const bool ck_ok = encode_checkpoint(decode_checkpoint(ckpt)) == ckpt;
  bool trained_ok = true;
  std::string trained_note = "trained checkpoint not available";
  if (trained) {
    const auto dir = fs::temp_directory_path() / "mvflow_acceptance";
    fs::create_directories(dir);
    save_checkpoint(*trained, dir / "a.bin");
    save_checkpoint(load_checkpoint(dir / "a.bin"), dir / "b.bin");
    trained_ok = detail::read_file_bytes(dir / "a.bin") == detail::read_file_bytes(dir / "b.bin");
    trained_note = std::string("trained checkpoint save/load/save ") + (trained_ok ? "ok" : "DIFFERS");
  }
  auto s = [](bool b) { return b ? "ok" : "DIFFERS"; };
  return {flo_ok && mvs_ok && ck_ok && trained_ok && trained,
          std::string("golden .flo ") + s(flo_ok) + ", sidecar " + s(mvs_ok) + ", checkpoint " + s(ck_ok) + "; " +
              trained_note};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"mvflow acceptance checks"};
  std::string data;
  int steps = 2000;
  std::string out;
  app.add_option("--data", data, "Directory with golden.flo, golden.mvs, golden.ckpt")->required()->check(CLI::ExistingDirectory);
  app.add_option("--steps", steps, "Training steps for the learning-progress check")->default_val(2000);
  app.add_option("--out", out, "Also write the trained checkpoint and eval table here");
  CLI11_PARSE(app, argc, argv);

  report("oracle_equivalence", oracle_equivalence);
  report("gradient_suite", gradient_suite);
  report("aggregation_reductions", reductions);
  report("warp_conservation", warp_conservation);
  report("metric_fidelity", metric_fidelity);

  Config cfg;
  cfg.train.total_steps = steps;
  cfg.train.eval_every = 500;
  std::optional<TrainResult> trained;
  report("learning_progress", [&]() -> Outcome {
    const auto t0 = Clock::now();
    trained = train(cfg);
    const double t = seconds_since(t0);
    const double first = trained->evals.front().second, last = trained->evals.back().second;
    std::string curve;
    for (auto [s, a] : trained->evals) curve += fmt(" %.0f:", s) + fmt("%.3f", a);
    return {last < 0.5 * first, fmt("eval AEPE %.3f -> %.3f (ratio %.3f, need < 0.5) after %.0f steps", first, last,
                                    last / first, steps) +
                                    "; curve" + curve + fmt("; train time %.0f s", t)};
  });

  report("directional_trend", [&]() -> Outcome {
    if (!trained) return {false, "no trained checkpoint"};
    const auto samples = synth_eval_set(cfg, cfg.train.eval_samples);
    const auto rep = run_benchmark(samples, {InitStrategy::zero, InitStrategy::raw_mv, InitStrategy::mvcm}, {4, 16},
                                   trained->checkpoint.params, cfg.model, {1, {}});
    if (!out.empty()) {
      fs::create_directories(out);
      save_checkpoint(trained->checkpoint, fs::path(out) / "checkpoint.bin");
      detail::write_file_bytes(fs::path(out) / "eval.jsonl", rep.to_jsonl());
      detail::write_file_bytes(fs::path(out) / "eval.txt", rep.to_table());
    }
    auto a = [&](InitStrategy s, int n) { return rep.cell(s, n).mean_aepe; };
    const double z4 = a(InitStrategy::zero, 4), z16 = a(InitStrategy::zero, 16);
    const double m4 = a(InitStrategy::mvcm, 4), m16 = a(InitStrategy::mvcm, 16);
    const double r4 = a(InitStrategy::raw_mv, 4), r16 = a(InitStrategy::raw_mv, 16);
    const bool first = m4 <= z4;
    const bool second = m4 <= z16 || m16 < z16;
    const bool third = r4 >= m4 && r16 >= m16;
    return {first && second && third, fmt("zero@4 %.3f zero@16 %.3f mvcm@4 %.3f mvcm@16 %.3f", z4, z16, m4, m16) +
                                          fmt(" raw_mv@4 %.3f raw_mv@16 %.3f", r4, r16)};
  });

  report("format_round_trips",
         [&] { return format_round_trips(data, trained ? &trained->checkpoint : nullptr); });

  std::printf("%s: %d failing\n", failures ? "FAILED" : "ALL PASSED", failures);
  return failures ? 1 : 0;
}
