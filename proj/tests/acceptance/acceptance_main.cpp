// Acceptance run: one PASS/FAIL line per criterion.
//
// Criteria 1-7 and 10 are property checks that run in seconds. Criteria 8
// and 9 train small models; every finished run is cached under --workdir
// next to the exact config it was trained with, so a re-run only evaluates
// what changed. Training is bitwise deterministic, which is what makes the
// cache sound.

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "icm/adaptation.hpp"
#include "icm/entropy_codec.hpp"
#include "icm/experiment.hpp"
#include "icm/io.hpp"
#include "icm/lc_decoder.hpp"
#include "icm/metrics.hpp"
#include "oracles/brute_metrics.hpp"
#include "support/latents.hpp"

namespace fs = std::filesystem;
using namespace icm;

namespace {

using Clock = std::chrono::steady_clock;

struct Outcome {
  bool pass = false;
  std::string detail;
  bool soft = false;
};

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

template <class S>
Eigen::Map<const RowMat<S>> as_mat(const Tensor& t, int rows, int cols) {
  return Eigen::Map<const RowMat<S>>(t.ptr(), rows, cols);
}

// ---------------------------------------------------------------- 1

Outcome dora_identity() {
  Rng rng(101);
  std::mt19937_64 g(101);
  double worst_init = 0.0, worst_norm = 0.0;
  for (int t = 0; t < 50; ++t) {
    const int d = 1 + static_cast<int>(g() % 96), k = 1 + static_cast<int>(g() % 96);
    const int r = 1 + static_cast<int>(g() % std::min(16, std::min(d, k)));
    const Tensor w0 = uniform_tensor({d, k}, 1.0f, rng, false);
    DoRAAdapter ad(w0, r, rng);
    const RowMat<float> w0m = as_mat<float>(w0, d, k);
    const RowVec<float> m = as_mat<float>(ad.magnitude, 1, k);
    const RowMat<float> a = as_mat<float>(ad.a, r, k);
    RowMat<float> b = as_mat<float>(ad.b, d, r);
    const RowMat<float> w = dora::effective_weight<float>(w0m, m, b, a, ad.eps);
    worst_init = std::max(worst_init, static_cast<double>((w - w0m).cwiseAbs().maxCoeff()));
    // Column norms equal m for an arbitrary direction update.
    std::normal_distribution<float> n(0.0f, 0.5f);
    for (Eigen::Index i = 0; i < b.size(); ++i) b.data()[i] = n(g);
    const RowMat<float> w2 = dora::effective_weight<float>(w0m, m, b, a, ad.eps);
    const RowVec<float> norms = column_norms<float>(w2);
    for (int j = 0; j < k; ++j) {
      worst_norm = std::max(worst_norm, std::abs(static_cast<double>(norms(j)) - m(j)) / std::abs(m(j)));
    }
  }
  return {worst_init <= 1e-6 && worst_norm <= 1e-5,
          "50 instances, max |W'-W0| at init " + fmt("%.2e", worst_init) + " (tol 1e-6), max column-norm rel. error " +
              fmt("%.2e", worst_norm) + " (tol 1e-5)"};
}

// ---------------------------------------------------------------- 2

Outcome dora_gradients() {
  using Md = RowMat<double>;
  using Vd = RowVec<double>;
  std::mt19937_64 g(202);
  std::normal_distribution<double> n(0.0, 1.0);
  auto rnd = [&](int r, int c, double s) {
    Md m(r, c);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = s * n(g);
    return m;
  };
  const double h = 1e-6, eps = 1e-8;
  double worst = 0.0;
  for (int t = 0; t < 20; ++t) {
    const int d = 2 + static_cast<int>(g() % 15), k = 2 + static_cast<int>(g() % 15), r = 1 + static_cast<int>(g() % 4);
    const Md w0 = rnd(d, k, 1.0), gm = rnd(d, k, 1.0);
    Md b = rnd(d, r, 0.3), a = rnd(r, k, 1.0);
    Vd m = rnd(1, k, 1.0).cwiseAbs();
    const auto an = dora::backward<double>(w0, m, b, a, gm, eps, false);
    auto loss = [&] { return gm.cwiseProduct(dora::effective_weight<double>(w0, m, b, a, eps)).sum(); };
    auto check = [&](auto& x, const auto& analytic) {
      for (Eigen::Index i = 0; i < x.size(); ++i) {
        const double keep = x.data()[i];
        x.data()[i] = keep + h;
        const double up = loss();
        x.data()[i] = keep - h;
        const double dn = loss();
        x.data()[i] = keep;
        const double fd = (up - dn) / (2 * h);
        const double ref = std::max(std::abs(fd), std::abs(analytic.data()[i]));
        if (ref > 0.0) worst = std::max(worst, std::abs(fd - analytic.data()[i]) / ref);
      }
    };
    check(m, an.dm);
    check(b, an.db);
    check(a, an.da);
  }
  return {worst < 1e-4, "20 fp64 instances, max relative error " + fmt("%.2e", worst) + " (tol 1e-4)"};
}

// ---------------------------------------------------------------- 3

Outcome injection_neutrality(const Backbone& frozen) {
  Rng rng(303);
  double worst = 0.0;
  const auto plans = ablation_plans();
  for (int i = 0; i < 10; ++i) {
    const Tensor img = uniform_tensor({1, 3, 64, 64}, 1.0f, rng, false);
    NoGradGuard ng;
    const Tensor base = extract_features(frozen, img);
    for (size_t p = 0; p < plans.size(); ++p) {
      const auto adapted = inject_adapters(frozen, plans[p], 17 + p);
      const Tensor out = adapted->forward(img);
      for (std::int64_t e = 0; e < out.numel(); ++e) worst = std::max(worst, std::abs(double(out.at(e)) - base.at(e)));
    }
  }
  return {worst <= 1e-5, "10 images x " + std::to_string(plans.size()) + " target-set plans, max |diff| " +
                             fmt("%.2e", worst) + " (tol 1e-5)"};
}

// ---------------------------------------------------------------- 4

Outcome codec_exactness() {
  Rng rng(404);
  DualSpatialModel model(69, 64, rng);
  // Move the prior away from its init so contexts carry information.
  for (const auto& p : model.parameters()) {
    Tensor t = p.tensor;
    for (auto& v : t.data()) v += static_cast<float>(0.05 * rng.normal());
  }
  int exact = 0, within = 0, with_extremes = 0;
  double worst_excess = -1e300;
  for (int t = 0; t < 1000; ++t) {
    const int side = 2 << (t % 3);  // 2, 4, 8
    Tensor y = support::sample_latent(model, side, side, rng, 1.0 + (t % 4));
    if (t % 4 == 0) {
      support::plant_extremes(y, rng);
      ++with_extremes;
    }
    const Bitstream bs = encode_latent(y, model, 16 * side, 16 * side, 0, 0);
    const Tensor back = decode_latent(Bitstream::parse(bs.serialize()), model);
    bool same = back.shape() == y.shape();
    for (std::int64_t i = 0; same && i < y.numel(); ++i) same = back.at(i) == y.at(i);
    exact += same ? 1 : 0;
    double est = 0.0;
    {
      NoGradGuard ng;
      est = model.rate_bits(y).item();
    }
    const double actual = 8.0 * static_cast<double>(bs.total_bytes());
    const double excess = actual - (1.02 * est + 8.0 * 64.0);
    worst_excess = std::max(worst_excess, excess);
    within += excess <= 0.0 ? 1 : 0;
  }
  return {exact == 1000 && within == 1000,
          std::to_string(exact) + "/1000 bit-exact (" + std::to_string(with_extremes) + " with escape extremes), " +
              std::to_string(within) + "/1000 within 1.02*est + 64-byte header; worst margin " +
              fmt("%+.1f", worst_excess) + " bits"};
}

// ---------------------------------------------------------------- 5

Outcome decoder_shapes() {
  Rng rng(505);
  NoGradGuard ng;
  int checks = 0, bad = 0;
  for (int s = 1; s <= 3; ++s) {
    const int k = 1 << (s + 1);
    AttentionStage st(s, 8, 8, 2, 2, 2, k, rng);
    for (int f : {32, 64, 128}) {
      StageTrace tr;
      st.forward(uniform_tensor({1, 8, f, f}, 1.0f, rng, false), nullptr, 0, 0, &tr);
      ++checks;
      if (tr.scores != Shape{1, 2, f * f / 4, f * f / (k * k)}) ++bad;
    }
  }
  // Chained decoder: KV count stays H1*W1/16 in every stage.
  Rng drng(506);
  const LCDecoder dec(12, task_spec(TaskId::semseg, 5), DecoderConfig{}, drng);
  for (int latent : {4, 8, 16}) {
    DecoderTrace tr;
    dec.forward(uniform_tensor({1, 12, latent, latent}, 1.0f, rng, false), &tr);
    for (const auto& st : tr.stages) {
      const int k = 1 << (st.stage + 1);
      ++checks;
      if (st.queries != st.height * st.width / 4 || st.kv_tokens != st.height * st.width / (k * k) ||
          st.kv_tokens != latent * latent / 16) {
        ++bad;
      }
    }
  }
  return {bad == 0, std::to_string(checks - bad) + "/" + std::to_string(checks) +
                        " stage shapes match (HW/4) x (HW/k^2); per-stage sizes 32/64/128, chained latents 4/8/16"};
}

// ---------------------------------------------------------------- 6

Outcome fusion_neutrality() {
  DecoderConfig off;
  off.fusion = false;
  Rng ra(606), rb(606);
  const LCDecoder with(12, task_spec(TaskId::semseg, 5), DecoderConfig{}, ra);
  const LCDecoder without(12, task_spec(TaskId::semseg, 5), off, rb);
  Rng rng(607);
  NoGradGuard ng;
  int equal = 0;
  for (int i = 0; i < 10; ++i) {
    const int side = 4 << (i % 2);
    const Tensor x = uniform_tensor({1, 12, side, side}, 1.0f, rng, false);
    const Tensor a = with.forward(x), b = without.forward(x);
    equal += (a.shape() == b.shape() && std::equal(a.data().begin(), a.data().end(), b.data().begin())) ? 1 : 0;
  }
  return {equal == 10, std::to_string(equal) + "/10 inputs bitwise equal with alpha = 0"};
}

// ---------------------------------------------------------------- 7

Outcome metric_oracles() {
  namespace m = icm::metrics;
  std::mt19937_64 g(707);
  auto uni = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(g); };
  auto pick = [&](int n) { return static_cast<int>(g() % static_cast<std::uint64_t>(n)); };
  double worst[5] = {0, 0, 0, 0, 0};
  for (int t = 0; t < 100; ++t) {
    const int h = 1 + pick(8), w = 1 + pick(8), n = h * w, k = 2 + pick(4);
    std::vector<int> lab(n), pred(n);
    for (int i = 0; i < n; ++i) {
      lab[i] = pick(5) == 0 ? 255 : pick(k);
      pred[i] = pick(k + 1);
    }
    lab[0] = pick(k);
    worst[0] = std::max(worst[0], std::abs(m::miou(pred, lab, k) - oracle::miou(pred, lab, k)));

    std::vector<double> p(n), l(n);
    std::vector<std::uint8_t> v(n);
    for (int i = 0; i < n; ++i) {
      p[i] = uni(-3, 3);
      l[i] = uni(-3, 3);
      v[i] = pick(4) != 0;
    }
    v[0] = 1;
    worst[1] = std::max(worst[1], std::abs(m::rmse(p, l, v) - oracle::rmse(p, l, v)));

    std::vector<double> pn(3 * n), ln(3 * n);
    for (auto& x : pn) x = uni(-1, 1);
    for (auto& x : ln) x = uni(-1, 1);
    worst[2] = std::max(worst[2], std::abs(m::mean_angular_error(pn, ln) - oracle::merr(pn, ln)));

    std::vector<double> s(n);
    std::vector<std::uint8_t> sal(n);
    for (int i = 0; i < n; ++i) {
      s[i] = uni(0, 1);
      sal[i] = pick(3) == 0;
    }
    sal[0] = 1;
    worst[3] = std::max(worst[3], std::abs(m::max_f_measure(s, sal) - oracle::maxf(s, sal)));

    std::vector<m::BoundaryImage> ims;
    std::vector<oracle::Image> oims;
    for (int im = 0; im < 2; ++im) {
      m::BoundaryImage b{h, w, std::vector<double>(n), std::vector<std::uint8_t>(n)};
      for (int i = 0; i < n; ++i) {
        b.scores[i] = uni(0, 1);
        b.label[i] = pick(4) == 0;
      }
      ims.push_back(b);
      oims.push_back({h, w, b.scores, b.label});
    }
    ims[0].label[0] = oims[0].label[0] = 1;
    const int tol = t % 3;
    worst[4] = std::max(worst[4], std::abs(m::ods_f_measure(ims, 99, tol) - oracle::odsf(oims, 99, tol)));
  }
  const double all = *std::max_element(worst, worst + 5);
  std::ostringstream d;
  d << "100 instances; max |diff| miou " << worst[0] << ", rmse " << worst[1] << ", merr " << worst[2] << ", maxf "
    << worst[3] << ", odsf " << worst[4] << " (tol 1e-9)";
  return {all <= 1e-9, d.str()};
}

// ---------------------------------------------------------------- 10

Outcome parameter_efficiency(const Backbone& frozen) {
  AdapterPlan plan;  // DoRA, r = 8, {query, key, value}
  const auto adapted = inject_adapters(frozen, plan, 1);
  const std::int64_t closed = closed_form_adapter_count(frozen, plan);
  std::int64_t enumerated = 0;
  for (const auto& p : adapted->adapter_parameters()) enumerated += p.tensor.numel();
  const double frac = adapter_param_fraction(*adapted);
  std::ostringstream d;
  d << "closed form " << closed << ", enumerated " << enumerated << ", counted " << adapted->adapter_param_count()
    << "; adapter_param_fraction " << fmt("%.4f", 100.0 * frac)
    << "% of the toy backbone (full-scale reference point: 0.41%, context only)";
  return {closed == enumerated && closed == adapted->adapter_param_count(), d.str()};
}

// ---------------------------------------------------------------- 8 and 9

struct RunResult {
  RDPoint point;
  double seconds = 0.0;
  bool cached = false;
};

class Runner {
 public:
  Runner(fs::path workdir, const Backbone& pretrained) : dir_(std::move(workdir)), pretrained_(pretrained) {}

  RunResult run(const TrainConfig& cfg) {
    std::ostringstream name;
    name << to_string(cfg.mode) << (cfg.inter_sup ? "" : "_nointersup") << "_lam" << cfg.lambda << "_seed" << cfg.seed;
    const fs::path rd = dir_ / "runs" / name.str();
    const json want = cfg.to_json();
    if (fs::exists(rd / "result.json")) {
      const json got = read_json_file(rd / "result.json");
      if (got.value("config", json()) == want) {
        RunResult r;
        r.point = {cfg.lambda, got.at("bpp_est"), got.at("bpp_actual"), got.at("metric"), to_string(cfg.task),
                   mode_key(cfg), cfg.seed};
        r.seconds = got.at("seconds");
        r.cached = true;
        return r;
      }
    }
    if (!data_) data_ = std::make_unique<Dataset>(build_dataset(cfg.data));
    const auto t0 = Clock::now();
    IcmModel model(cfg, pretrained_);
    train(model, *data_, rd);
    const EvalResult ev = evaluate(model, data_->val);
    RunResult r;
    r.point = {cfg.lambda, ev.bpp_est, ev.bpp_actual, ev.metric, to_string(cfg.task), mode_key(cfg), cfg.seed};
    r.seconds = seconds_since(t0);
    write_json_file(rd / "result.json", json{{"config", want},
                                             {"bpp_est", ev.bpp_est},
                                             {"bpp_actual", ev.bpp_actual},
                                             {"metric", ev.metric},
                                             {"seconds", r.seconds}});
    std::fprintf(stderr, "  trained %-34s bpp %.4f mIoU %.4f (%.0f s)\n", name.str().c_str(), ev.bpp_actual, ev.metric,
                 r.seconds);
    return r;
  }

 private:
  fs::path dir_;
  const Backbone& pretrained_;
  std::unique_ptr<Dataset> data_;
};

struct Arm {
  std::vector<RunResult> runs;
  double seconds() const {
    double s = 0.0;
    for (const auto& r : runs) s += r.seconds;
    return s;
  }
  std::vector<double> values(double lambda, bool bpp) const {
    std::vector<double> v;
    for (const auto& r : runs) {
      if (r.point.lambda == lambda) v.push_back(bpp ? r.point.bpp_actual : r.point.metric);
    }
    return v;
  }
};

Arm run_arm(Runner& runner, TrainConfig cfg, const std::vector<double>& lambdas) {
  Arm arm;
  for (auto seed : cfg.seeds) {
    for (double lam : lambdas) {
      TrainConfig c = cfg;
      c.seed = seed;
      c.lambda = lam;
      arm.runs.push_back(runner.run(c));
    }
  }
  return arm;
}

std::string join(const std::vector<double>& v, const char* f = "%.4f") {
  std::string s;
  for (size_t i = 0; i < v.size(); ++i) s += (i ? "/" : "") + fmt(f, v[i]);
  return s;
}

Outcome rd_trend(const Arm& dora, const std::vector<double>& lambdas) {
  std::vector<double> bpp, miou;
  for (double lam : lambdas) {
    bpp.push_back(median(dora.values(lam, true)));
    miou.push_back(median(dora.values(lam, false)));
  }
  bool increasing = true;
  for (size_t i = 1; i < bpp.size(); ++i) increasing = increasing && bpp[i] > bpp[i - 1];
  const size_t hi = static_cast<size_t>(std::max_element(bpp.begin(), bpp.end()) - bpp.begin());
  const size_t lo = static_cast<size_t>(std::min_element(bpp.begin(), bpp.end()) - bpp.begin());
  const double gap = miou[hi] - miou[lo];
  std::ostringstream d;
  d << "median bpp over seeds at lambda " << join(lambdas, "%g") << " = " << join(bpp)
    << " (strictly increasing in lambda: " << (increasing ? "yes" : "no")
    << "; a larger task weight buys accuracy with rate), median mIoU " << join(miou) << ", gap highest-bpp minus lowest-bpp "
    << fmt("%+.4f", gap) << " (need >= 0.02); training " << fmt("%.0f", dora.seconds()) << " s";
  return {increasing && gap >= 0.02 && dora.seconds() < 3600.0, d.str()};
}

Outcome ablation_order(const Arm& dora, const Arm& fixed, const Arm& scratch, const Arm& nointer, double lam,
                       const std::vector<std::uint64_t>& seeds) {
  const double md = median(dora.values(lam, false)), mf = median(fixed.values(lam, false));
  const double ms = median(scratch.values(lam, false)), mn = median(nointer.values(lam, false));
  const bool order = md > ms && mf > ms;
  const bool inter = md >= mn;
  const double secs = fixed.seconds() + scratch.seconds() + nointer.seconds() + dora.seconds();
  std::ostringstream d;
  d << "lambda " << lam << ", seeds";
  for (auto s : seeds) d << ' ' << s;
  d << "; median mIoU DoRA FT " << fmt("%.4f", md) << " [" << join(dora.values(lam, false)) << "], Fixed "
    << fmt("%.4f", mf) << " [" << join(fixed.values(lam, false)) << "], Scratch " << fmt("%.4f", ms) << " ["
    << join(scratch.values(lam, false)) << "], DoRA No InterSup " << fmt("%.4f", mn) << " ["
    << join(nointer.values(lam, false)) << "]; {DoRA FT, Fixed} > Scratch: " << (order ? "yes" : "NO")
    << ", InterSup >= No InterSup: " << (inter ? "yes" : "NO") << "; training " << fmt("%.0f", secs) << " s";
  Outcome o{order && inter && secs < 7200.0, d.str(), true};
  return o;
}

// Pretrains once per backbone/pretext setting and records the file in
// cfg.backbone.path so trained checkpoints can find it again.
Backbone shared_backbone(TrainConfig& cfg, const fs::path& workdir) {
  const json key{{"config", cfg.backbone.config.to_json()},
                 {"seed", cfg.backbone.seed},
                 {"steps", cfg.backbone.pretrain_steps},
                 {"pretext", cfg.backbone.pretext.to_json()}};
  const std::string k = key.dump();
  std::ostringstream name;
  name << "backbone_" << std::hex << fnv1a({reinterpret_cast<const std::uint8_t*>(k.data()), k.size()}) << ".icma";
  const fs::path path = fs::absolute(workdir / name.str());
  cfg.backbone.path = path.string();
  if (fs::exists(path)) return load_backbone(path);
  std::fprintf(stderr, "  pretraining shared backbone (%d steps)\n", cfg.backbone.pretrain_steps);
  PretextReport rep;
  const auto t0 = Clock::now();
  const Backbone bb = pretrain_backbone(build_backbone(cfg.backbone.config, cfg.backbone.seed), cfg.backbone.pretext,
                                        cfg.backbone.pretrain_steps, cfg.backbone.seed, &rep);
  std::fprintf(stderr, "  pretext accuracy %.3f -> %.3f (%.0f s)\n", rep.accuracy_before, rep.accuracy_after,
               seconds_since(t0));
  save_backbone(path, bb);
  return bb;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria"};
  std::string workdir = "acceptance_runs";
  std::string config = ICM_ACCEPTANCE_CONFIG;
  std::vector<int> only;
  app.add_option("--workdir", workdir, "run cache and checkpoints");
  app.add_option("--config", config, "experiment config for criteria 8 and 9");
  app.add_option("--only", only, "run only these criteria");
  CLI11_PARSE(app, argc, argv);
  auto want = [&](int c) { return only.empty() || std::find(only.begin(), only.end(), c) != only.end(); };

  int hard_failures = 0, soft_failures = 0;
  auto report = [&](int id, const char* name, double budget, const std::function<Outcome()>& fn) {
    if (!want(id)) return;
    const auto t0 = Clock::now();
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = seconds_since(t0);
    if (budget > 0 && secs > budget) {
      o.pass = false;
      o.detail += "; over the " + fmt("%.0f", budget) + " s budget";
    }
    const char* tag = o.pass ? "PASS" : (o.soft ? "FAIL (soft, flagged)" : "FAIL");
    std::printf("[%s] %2d %s: %s [%.1f s]\n", tag, id, name, o.detail.c_str(), secs);
    std::fflush(stdout);
    if (!o.pass) (o.soft ? soft_failures : hard_failures)++;
  };

  fs::create_directories(workdir);
  TrainConfig cfg = load_config(config);
  std::unique_ptr<Backbone> bb;
  auto backbone = [&]() -> const Backbone& {
    if (!bb) bb = std::make_unique<Backbone>(shared_backbone(cfg, workdir));
    return *bb;
  };

  report(1, "DoRA identity", 10, dora_identity);
  report(2, "DoRA gradient oracle", 30, dora_gradients);
  report(3, "injection neutrality", 0, [&] { return injection_neutrality(backbone()); });
  report(4, "codec exactness", 120, codec_exactness);
  report(5, "decoder shape theorem", 30, decoder_shapes);
  report(6, "fusion neutrality", 30, fusion_neutrality);
  report(7, "metric oracles", 60, metric_oracles);

  if (want(8) || want(9)) {
    const Backbone& pre = backbone();
    Runner runner(fs::path(workdir), pre);
    const std::vector<double> lambdas = cfg.lambdas;
    const double top = *std::max_element(lambdas.begin(), lambdas.end());
    TrainConfig dcfg = cfg;
    dcfg.mode = TrainMode::dora_ft;
    dcfg.inter_sup = true;
    Arm dora;
    report(8, "RD trend", 0, [&] {
      dora = run_arm(runner, dcfg, lambdas);
      return rd_trend(dora, lambdas);
    });
    report(9, "ablation ordering", 0, [&] {
      if (dora.runs.empty()) dora = run_arm(runner, dcfg, {top});
      TrainConfig f = cfg, s = cfg, n = dcfg;
      f.mode = TrainMode::fixed;
      s.mode = TrainMode::scratch;
      n.inter_sup = false;
      const Arm fixed = run_arm(runner, f, {top});
      const Arm scratch = run_arm(runner, s, {top});
      const Arm nointer = run_arm(runner, n, {top});
      return ablation_order(dora, fixed, scratch, nointer, top, cfg.seeds);
    });
  }
  report(10, "parameter efficiency", 0, [&] { return parameter_efficiency(backbone()); });

  std::printf("summary: %d hard failure(s), %d flagged soft failure(s)\n", hard_failures, soft_failures);
  return hard_failures == 0 ? 0 : 1;
}
