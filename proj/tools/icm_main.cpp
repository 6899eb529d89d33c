#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "icm/errors.hpp"
#include "icm/experiment.hpp"
#include "icm/plot.hpp"
#include "icm/training.hpp"

using namespace icm;
namespace fs = std::filesystem;

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitData = 3;
constexpr int kExitModel = 4;

struct Overrides {
  std::string config;
  std::optional<std::string> task, mode;
  std::optional<double> lambda;
  std::optional<std::uint64_t> seed;
  std::string out;
};

void add_common(CLI::App* cmd, Overrides& o, bool need_config) {
  auto* c = cmd->add_option("--config", o.config, "JSON experiment config");
  if (need_config) c->required();
  cmd->add_option("--task", o.task, "semseg, depth, normal, boundary or saliency");
  cmd->add_option("--lambda", o.lambda, "rate-accuracy trade-off");
  cmd->add_option("--mode", o.mode, "full_ft, dora_ft, fixed or scratch");
  cmd->add_option("--seed", o.seed, "training seed");
  cmd->add_option("--out", o.out, "output path")->required();
}

TrainConfig resolve_config(const Overrides& o) {
  if (!fs::exists(o.config)) throw ConfigError("config file not found: " + o.config);
  json j = read_json_file(o.config);
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  if (o.task) j["task"] = *o.task;
  if (o.mode) j["mode"] = *o.mode;
  if (o.lambda) j["lambda"] = *o.lambda;
  if (o.seed) {
    j["seed"] = *o.seed;
    j["seeds"] = json::array({*o.seed});
  }
  return TrainConfig::from_json(j);
}

Tensor read_ppm(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot read " + path.string());
  std::string magic;
  int w = 0, h = 0, maxv = 0;
  f >> magic >> w >> h >> maxv;
  f.get();
  if (magic != "P6" || w <= 0 || h <= 0 || maxv != 255) throw DataError(path.string() + " is not an 8-bit binary PPM");
  std::vector<unsigned char> raw(static_cast<size_t>(w) * h * 3);
  if (!f.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()))) {
    throw DataError(path.string() + ": truncated pixel data");
  }
  std::vector<float> chw(raw.size());
  const size_t hw = static_cast<size_t>(w) * h;
  for (size_t i = 0; i < hw; ++i) {
    for (int c = 0; c < 3; ++c) chw[c * hw + i] = raw[i * 3 + c] / 255.0f;
  }
  return Tensor({1, 3, h, w}, std::move(chw));
}

Tensor read_image(const fs::path& path) {
  if (path.extension() == ".ppm") return read_ppm(path);
  const auto scene = synth::load_scene(path);
  return Tensor({1, 3, scene.height, scene.width}, scene.image);
}

int run(int argc, char** argv) {
  CLI::App app{"Image coding for machines: train, sweep, compress, decompress, evaluate, plot"};
  app.require_subcommand(1);

  Overrides pre_o;
  int pre_steps = -1;
  auto* pre = app.add_subcommand("pretrain", "pretrain and freeze the shared backbone");
  add_common(pre, pre_o, false);
  pre->add_option("--steps", pre_steps, "pretext training steps (default: config value)");

  Overrides train_o;
  auto* tr = app.add_subcommand("train", "train one model");
  add_common(tr, train_o, true);

  Overrides sweep_o;
  std::vector<double> sweep_lambdas;
  auto* sw = app.add_subcommand("sweep", "train and evaluate one model per lambda");
  add_common(sw, sweep_o, true);
  sw->add_option("--lambdas", sweep_lambdas, "lambda grid (default from config)");

  std::string ckpt, image, in_path, out_path, csv;
  int lambda_index = 0;
  auto* cp = app.add_subcommand("compress", "encode an image (PPM or scene file) to a bitstream");
  cp->add_option("--ckpt", ckpt)->required();
  cp->add_option("--image", image)->required();
  cp->add_option("--out", out_path)->required();
  cp->add_option("--lambda-index", lambda_index);

  auto* dp = app.add_subcommand("decompress", "decode a bitstream into a prediction array file");
  dp->add_option("--ckpt", ckpt)->required();
  dp->add_option("--in", in_path)->required();
  dp->add_option("--out", out_path)->required();

  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on its validation split");
  ev->add_option("--ckpt", ckpt)->required();
  ev->add_option("--out", out_path, "optional JSON report path");

  auto* pl = app.add_subcommand("plot", "rate-accuracy curves and ablation bars from an RD CSV");
  pl->add_option("--csv", csv)->required();
  pl->add_option("--out", out_path)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  if (*pre) {
    TrainConfig cfg = pre_o.config.empty() ? TrainConfig{} : resolve_config(pre_o);
    if (pre_o.seed) cfg.backbone.seed = *pre_o.seed;
    const int steps = pre_steps >= 0 ? pre_steps : cfg.backbone.pretrain_steps;
    PretextReport rep;
    const Backbone bb =
        pretrain_backbone(build_backbone(cfg.backbone.config, cfg.backbone.seed), cfg.backbone.pretext, steps,
                          cfg.backbone.seed, &rep);
    save_backbone(pre_o.out, bb);
    std::cout << json{{"backbone", pre_o.out},
                      {"fingerprint", bb.pretrain_fingerprint},
                      {"steps", steps},
                      {"pretext_accuracy_before", rep.accuracy_before},
                      {"pretext_accuracy_after", rep.accuracy_after}}
                     .dump(2)
              << "\n";
  } else if (*tr) {
    const TrainConfig cfg = resolve_config(train_o);
    const Backbone bb = obtain_backbone(cfg.backbone);
    const Dataset data = build_dataset(cfg.data);
    IcmModel model(cfg, bb);
    const TrainResult r = train(model, data, train_o.out);
    const auto& last = r.log.back();
    std::cout << json{{"checkpoint", train_o.out}, {"seconds", r.seconds}, {"final", last.to_json()}}.dump(2) << "\n";
  } else if (*sw) {
    TrainConfig cfg = resolve_config(sweep_o);
    if (!sweep_lambdas.empty()) cfg.lambdas = sweep_lambdas;
    cfg.validate();
    const Backbone bb = obtain_backbone(cfg.backbone);
    const auto rows = run_sweep(cfg, bb, sweep_o.out, true);
    std::vector<double> lam, bpp;
    for (const auto& r : rows) {
      lam.push_back(r.lambda);
      bpp.push_back(r.bpp_actual);
    }
    std::cout << json{{"rows", rd_to_json(rows)}, {"spearman_lambda_bpp", spearman(lam, bpp)}}.dump(2) << "\n";
  } else if (*cp) {
    auto model = load_checkpoint(ckpt);
    const Tensor img = read_image(image);
    const Bitstream bs = compress_and_decode(*model, img, static_cast<std::uint8_t>(lambda_index)).stream;
    write_bitstream(out_path, bs);
    const double pixels = static_cast<double>(img.dim(2)) * img.dim(3);
    std::cout << json{{"bitstream", out_path},
                      {"height", bs.height},
                      {"width", bs.width},
                      {"payload_bytes", bs.payload.size()},
                      {"total_bytes", bs.total_bytes()},
                      {"bpp", 8.0 * static_cast<double>(bs.payload.size()) / pixels}}
                     .dump(2)
              << "\n";
  } else if (*dp) {
    auto model = load_checkpoint(ckpt);
    const Bitstream bs = read_bitstream(in_path);
    if (bs.task_id != static_cast<std::uint8_t>(model->task().id)) {
      throw IncompatibleModelError("bitstream task id does not match the checkpoint task");
    }
    NoGradGuard ng;
    const Tensor pred = model->decode_prediction(decode_latent(bs, model->entropy()));
    save_arrays(out_path, json{{"kind", "prediction"}, {"task", to_string(model->task().id)}},
                ParamList{{"prediction", pred}});
    const double pixels = static_cast<double>(bs.height) * bs.width;
    std::cout << json{{"prediction", out_path},
                      {"shape", pred.shape()},
                      {"bpp", 8.0 * static_cast<double>(bs.payload.size()) / pixels}}
                     .dump(2)
              << "\n";
  } else if (*ev) {
    auto model = load_checkpoint(ckpt);
    const Dataset data = build_dataset(model->config().data);
    const EvalResult r = evaluate(*model, data.val);
    const json j = r.to_json();
    if (!out_path.empty()) write_json_file(out_path, j);
    std::cout << j.dump(2) << "\n";
  } else if (*pl) {
    const auto rows = read_rd_csv(csv);
    if (rows.empty()) throw EmptyError(csv + " has no rows");
    json files = json::array();
    for (const auto& p : plot_rd(rows, out_path)) files.push_back(p.string());
    std::cout << json{{"plots", files}}.dump(2) << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const ArgumentError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const IncompatibleModelError& e) {
    std::cerr << "model mismatch: " << e.what() << "\n";
    return kExitModel;
  } catch (const icm::Error& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
