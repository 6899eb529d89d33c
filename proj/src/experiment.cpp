#include "icm/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>

#include "icm/errors.hpp"
#include "icm/metrics.hpp"
#include "icm/ops.hpp"

namespace icm {

json EvalResult::to_json() const {
  std::ostringstream frac;
  frac << std::fixed << std::setprecision(4) << adapter_param_fraction;
  return {{"metric", metric_name},
          {"value", metric},
          {"direction", higher_better ? "higher_better" : "lower_better"},
          {"bpp_est", bpp_est},
          {"bpp_actual", bpp_actual},
          {"header_bpp", header_bpp},
          {"n_images", n_images},
          {"adapter_param_fraction", frac.str()},
          {"entropy_model", "checkerboard two-pass: per-channel Gaussian anchors, conv context for non-anchors"}};
}

CodedPrediction compress_and_decode(IcmModel& model, const Tensor& image, std::uint8_t lambda_index) {
  NoGradGuard ng;
  const Tensor yhat = model.encode_latent(image);
  CodedPrediction out;
  out.stream = encode_latent(yhat, model.entropy(), image.dim(2), image.dim(3),
                             static_cast<std::uint8_t>(model.task().id), lambda_index);
  const Tensor decoded = decode_latent(Bitstream::parse(out.stream.serialize()), model.entropy());
  for (std::int64_t i = 0; i < yhat.numel(); ++i) {
    if (decoded.at(i) != yhat.at(i)) throw NumericalError("decoded latent differs from the encoded latent");
  }
  out.prediction = model.decode_prediction(decoded);
  return out;
}

namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

EvalResult evaluate(IcmModel& model, const std::vector<synth::SyntheticScene>& scenes, std::uint8_t lambda_index) {
  if (scenes.empty()) throw EmptyError("evaluate: no scenes");
  const TaskSpec& task = model.task();
  EvalResult r;
  r.metric_name = to_string(task.metric);
  r.higher_better = higher_is_better(task.metric);
  r.n_images = static_cast<int>(scenes.size());
  if (model.adapted()) r.adapter_param_fraction = adapter_param_fraction(*model.adapted());

  metrics::Confusion confusion(task.channels);
  std::vector<int> seg_pred, seg_label;
  std::vector<double> pd, ld, sal_scores;
  std::vector<std::uint8_t> valid, sal_label;
  std::vector<metrics::BoundaryImage> boundary;
  double bits_est = 0.0, bits_payload = 0.0, bits_header = 0.0, pixels = 0.0;

  for (const auto& s : scenes) {
    const Batch batch = make_batch({&s}, task.id);
    const CodedPrediction cp = compress_and_decode(model, batch.images, lambda_index);
    {
      NoGradGuard ng;
      bits_est += model.entropy().rate_bits(model.encode_latent(batch.images)).item();
    }
    bits_payload += 8.0 * static_cast<double>(cp.stream.payload.size());
    bits_header += 8.0 * Bitstream::kHeaderBytes;
    const int h = s.height, w = s.width;
    const size_t hw = static_cast<size_t>(h) * w;
    pixels += static_cast<double>(hw);
    const Tensor& p = cp.prediction;
    switch (task.id) {
      case TaskId::semseg: {
        std::vector<int> pred(hw), lab(hw);
        for (size_t i = 0; i < hw; ++i) {
          int best = 0;
          for (int c = 1; c < task.channels; ++c) {
            if (p.at(static_cast<std::int64_t>(c * hw + i)) > p.at(static_cast<std::int64_t>(best * hw + i))) best = c;
          }
          pred[i] = best;
          lab[i] = s.semseg[i];
        }
        confusion.add(pred, lab);
        break;
      }
      case TaskId::depth:
        for (size_t i = 0; i < hw; ++i) {
          pd.push_back(p.at(static_cast<std::int64_t>(i)));
          ld.push_back(s.depth[i]);
          valid.push_back(1);
        }
        break;
      case TaskId::normal:
        for (size_t i = 0; i < hw; ++i) {
          for (int c = 0; c < 3; ++c) {
            pd.push_back(p.at(static_cast<std::int64_t>(c * hw + i)));
            ld.push_back(s.normals[c * hw + i]);
          }
        }
        break;
      case TaskId::saliency:
        for (size_t i = 0; i < hw; ++i) {
          sal_scores.push_back(sigmoid(p.at(static_cast<std::int64_t>(i))));
          sal_label.push_back(s.saliency[i]);
        }
        break;
      case TaskId::boundary: {
        metrics::BoundaryImage bi{h, w, std::vector<double>(hw), s.boundary};
        for (size_t i = 0; i < hw; ++i) bi.scores[i] = sigmoid(p.at(static_cast<std::int64_t>(i)));
        boundary.push_back(std::move(bi));
        break;
      }
    }
  }
  switch (task.id) {
    case TaskId::semseg: r.metric = confusion.miou(); break;
    case TaskId::depth: r.metric = metrics::rmse(pd, ld, valid); break;
    case TaskId::normal: r.metric = metrics::mean_angular_error(pd, ld); break;
    case TaskId::saliency: r.metric = metrics::max_f_measure(sal_scores, sal_label); break;
    case TaskId::boundary: r.metric = metrics::ods_f_measure(boundary); break;
  }
  r.bpp_est = bits_est / pixels;
  r.bpp_actual = bits_payload / pixels;
  r.header_bpp = bits_header / pixels;
  return r;
}

std::string mode_key(const TrainConfig& cfg) {
  std::string k = to_string(cfg.mode);
  if (cfg.decoder == "full") k += "/full_dec";
  if (!cfg.inter_sup) k += "/no_intersup";
  return k;
}

std::string mode_label(const std::string& key) {
  const auto slash = key.find('/');
  const TrainMode m = parse_mode(key.substr(0, slash));
  const bool full = key.find("/full_dec") != std::string::npos;
  const bool no_sup = key.find("/no_intersup") != std::string::npos;
  return series_label(m, !no_sup, full);
}

void write_rd_csv(const std::filesystem::path& path, const std::vector<RDPoint>& rows) {
  std::ofstream f(path);
  if (!f) throw DataError("cannot write " + path.string());
  f << "lambda,bpp_est,bpp_actual,metric,task,mode,seed\n";
  f << std::setprecision(10);
  for (const auto& r : rows) {
    f << r.lambda << ',' << r.bpp_est << ',' << r.bpp_actual << ',' << r.metric << ',' << r.task << ',' << r.mode
      << ',' << r.seed << '\n';
  }
}

std::vector<RDPoint> read_rd_csv(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw DataError("cannot read " + path.string());
  std::string line;
  if (!std::getline(f, line) || line != "lambda,bpp_est,bpp_actual,metric,task,mode,seed") {
    throw DataError(path.string() + ": missing or unexpected CSV header");
  }
  std::vector<RDPoint> rows;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cols;
    std::stringstream ss(line);
    std::string c;
    while (std::getline(ss, c, ',')) cols.push_back(c);
    if (cols.size() != 7) throw DataError(path.string() + ": malformed row '" + line + "'");
    try {
      rows.push_back({std::stod(cols[0]), std::stod(cols[1]), std::stod(cols[2]), std::stod(cols[3]), cols[4], cols[5],
                      std::stoull(cols[6])});
    } catch (const std::exception&) {
      throw DataError(path.string() + ": malformed row '" + line + "'");
    }
  }
  return rows;
}

json rd_to_json(const std::vector<RDPoint>& rows) {
  json arr = json::array();
  for (const auto& r : rows) {
    arr.push_back({{"lambda", r.lambda},
                   {"bpp_est", r.bpp_est},
                   {"bpp_actual", r.bpp_actual},
                   {"metric", r.metric},
                   {"task", r.task},
                   {"mode", r.mode},
                   {"seed", r.seed}});
  }
  return arr;
}

double median(std::vector<double> v) {
  if (v.empty()) throw EmptyError("median of an empty set");
  std::sort(v.begin(), v.end());
  const size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

namespace {

std::vector<double> ranks(const std::vector<double>& v) {
  std::vector<size_t> idx(v.size());
  for (size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  std::sort(idx.begin(), idx.end(), [&](size_t a, size_t b) { return v[a] < v[b]; });
  std::vector<double> r(v.size());
  for (size_t i = 0; i < idx.size();) {
    size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (size_t k = i; k <= j; ++k) r[idx[k]] = avg;
    i = j + 1;
  }
  return r;
}

}  // namespace

double spearman(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size() || a.size() < 2) throw ArgumentError("spearman: need two equal-length series of size >= 2");
  const auto ra = ranks(a), rb = ranks(b);
  const double n = static_cast<double>(a.size());
  const double ma = (n + 1) / 2;
  double num = 0, da = 0, db = 0;
  for (size_t i = 0; i < a.size(); ++i) {
    num += (ra[i] - ma) * (rb[i] - ma);
    da += (ra[i] - ma) * (ra[i] - ma);
    db += (rb[i] - ma) * (rb[i] - ma);
  }
  if (da == 0 || db == 0) return 0.0;
  return num / std::sqrt(da * db);
}

std::vector<RDPoint> run_sweep(const TrainConfig& cfg, const Backbone& pretrained, const std::filesystem::path& out_dir,
                               bool verbose) {
  if (cfg.lambdas.size() < 2) throw ConfigError("a sweep needs at least two lambda values");
  if (cfg.seeds.empty()) throw ConfigError("a sweep needs at least one seed");
  const Dataset data = build_dataset(cfg.data);
  std::vector<RDPoint> rows;
  for (std::uint64_t seed : cfg.seeds) {
    for (size_t li = 0; li < cfg.lambdas.size(); ++li) {
      TrainConfig c = cfg;
      c.lambda = cfg.lambdas[li];
      c.seed = seed;
      std::ostringstream name;
      name << to_string(c.task) << "_" << to_string(c.mode) << (c.inter_sup ? "" : "_nointersup")
           << (c.decoder == "full" ? "_fulldec" : "") << "_lam" << c.lambda << "_seed" << seed;
      const auto run_dir = out_dir.empty() ? std::filesystem::path{} : out_dir / "runs" / name.str();
      IcmModel model(c, pretrained);
      const TrainResult tr = train(model, data, run_dir);
      const EvalResult ev = evaluate(model, data.val, static_cast<std::uint8_t>(li));
      if (!run_dir.empty()) write_json_file(run_dir / "eval.json", ev.to_json());
      rows.push_back({c.lambda, ev.bpp_est, ev.bpp_actual, ev.metric, to_string(c.task), mode_key(c), seed});
      if (verbose) {
        std::fprintf(stderr, "[sweep] %s: bpp_est %.4f bpp_actual %.4f %s %.4f (%.0f s)\n", name.str().c_str(),
                     ev.bpp_est, ev.bpp_actual, ev.metric_name.c_str(), ev.metric, tr.seconds);
      }
    }
  }
  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    write_rd_csv(out_dir / "rd.csv", rows);
    write_json_file(out_dir / "rd.json", rd_to_json(rows));
  }
  return rows;
}

}  // namespace icm
