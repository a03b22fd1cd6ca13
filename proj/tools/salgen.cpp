// salgen: train, evaluate and inspect saliency generators from the shell.
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "oracles/selftest.hpp"
#include "salgen/checkpoint.hpp"
#include "salgen/config.hpp"
#include "salgen/data.hpp"
#include "salgen/evaluate.hpp"
#include "salgen/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace salgen;

namespace {

struct Common {
  std::string config_path;
  std::string out;
  std::vector<std::string> overrides;
  std::int64_t seed = -1;
  std::string precision;
};

void add_common(CLI::App* cmd, Common& c, bool with_config) {
  cmd->add_option("--out", c.out, "Output directory")->required();
  cmd->add_option("--seed", c.seed, "Seed (overrides the config)");
  cmd->add_option("--precision", c.precision, "Dense-kernel precision")->check(CLI::IsMember({"f32", "f64"}));
  if (with_config) {
    cmd->add_option("--config", c.config_path, "JSON config file")->check(CLI::ExistingFile);
    cmd->add_option("--set", c.overrides, "Config override key=value (repeatable)");
  }
}

// Merges file, --set, --seed and --precision. Throws before touching the disk.
TrainConfig effective_config(const Common& c) {
  json j = c.config_path.empty() ? to_json(TrainConfig{}) : to_json(load_config(c.config_path));
  j = apply_overrides(std::move(j), c.overrides);
  if (c.seed >= 0) j["seed"] = static_cast<std::uint64_t>(c.seed);
  if (!c.precision.empty()) j["precision"] = c.precision;
  return config_from_json(j);
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream os(p, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + p.string());
  os << text;
}

void write_json(const fs::path& p, const json& j) { write_text(p, j.dump(2) + "\n"); }

void write_manifest(const fs::path& out, const std::string& command, const json& extra) {
  json m = {{"command", command}, {"code_version", SALGEN_VERSION}, {"precision", precision() == Precision::f32 ? "f32" : "f64"}};
  for (auto& [k, v] : extra.items()) m[k] = v;
  write_json(out / "run.json", m);
}

Dataset read_dataset(const std::string& manifest, json& skipped_out) {
  LoadReport rep;
  Dataset ds = load_dataset(manifest, &rep);
  skipped_out = json::array();
  for (auto& [id, why] : rep.skipped) {
    std::cerr << "skipped " << id << ": " << why << "\n";
    skipped_out.push_back({{"id", id}, {"reason", why}});
  }
  return ds;
}

// Checkpoints carrying {"fixture": "ground_truth"} stand for a model whose
// predictions are the ground truth itself.
bool is_fixture(const std::string& path) {
  Checkpoint ck = load_checkpoint(path);
  return ck.meta.value("fixture", "") == "ground_truth";
}

struct Source {
  std::unique_ptr<Model> model;
  Predictor predictor;
  int samples = 1;
  std::uint64_t seed = 0;
  json describe;
};

Source open_source(const std::string& checkpoint, int samples, std::int64_t seed) {
  Source s;
  if (is_fixture(checkpoint)) {
    s.predictor = ground_truth_predictor();
    s.describe = {{"checkpoint", checkpoint}, {"fixture", "ground_truth"}};
    return s;
  }
  s.model = load_model(checkpoint);
  const TrainConfig& cfg = s.model->config;
  s.samples = samples > 0 ? samples : (cfg.generative() ? cfg.eval_samples : 1);
  s.seed = seed >= 0 ? static_cast<std::uint64_t>(seed) : cfg.seed;
  s.predictor = model_predictor(*s.model, s.samples, s.seed);
  s.describe = {{"checkpoint", checkpoint},
                {"config_hash", config_hash(to_json(cfg))},
                {"head", cfg.head},
                {"samples", s.samples},
                {"seed", s.seed}};
  return s;
}

void apply_precision(const std::string& p) {
  if (!p.empty()) set_precision(parse_precision(p));
}

int cmd_synth(const Common& c, SynthSpec spec) {
  apply_precision(c.precision);
  if (c.seed >= 0) spec.seed = static_cast<std::uint64_t>(c.seed);
  Dataset ds = synth_generate(spec);
  fs::create_directories(c.out);
  save_dataset(ds, c.out);
  write_manifest(c.out, "synth",
                 {{"seed", spec.seed},
                  {"count", spec.count},
                  {"size", spec.size},
                  {"contrast", spec.contrast},
                  {"with_depth", spec.with_depth},
                  {"with_scribble", spec.with_scribble}});
  std::cout << "wrote " << ds.size() << " samples to " << c.out << "/manifest.json\n";
  return 0;
}

int cmd_train(const Common& c, const std::string& data, bool resume) {
  TrainConfig cfg = effective_config(c);
  json skipped;
  Dataset ds = read_dataset(data, skipped);
  Trainer trainer(cfg, ds);

  fs::path out(c.out);
  fs::create_directories(out);
  fs::path ckpt = out / "checkpoint.ckpt";
  json cj = to_json(cfg);
  write_json(out / "config.json", cj);
  write_manifest(out, "train",
                 {{"config_hash", config_hash(cj)}, {"seed", cfg.seed}, {"data", data}, {"skipped", skipped}});

  std::ofstream log;
  if (resume && fs::exists(ckpt)) {
    trainer.resume(ckpt.string());
    std::cout << "resumed at step " << trainer.global_step() << "\n";
    log.open(out / "train.jsonl", std::ios::app);
  } else {
    log.open(out / "train.jsonl");
  }
  auto t0 = std::chrono::steady_clock::now();
  trainer.run(&log, ckpt.string());
  double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::cout << "trained " << trainer.global_step() << " steps in " << secs << " s; checkpoint " << ckpt.string()
            << "\n";
  return 0;
}

int cmd_eval(const Common& c, const std::string& data, const std::string& checkpoint, int samples) {
  apply_precision(c.precision);
  Source src = open_source(checkpoint, samples, c.seed);
  json skipped;
  Dataset ds = read_dataset(data, skipped);
  MetricReport rep = evaluate_dataset(src.predictor, ds);
  for (auto& s : skipped) rep.skipped.emplace_back(s["id"], s["reason"]);

  fs::path out(c.out);
  fs::create_directories(out);
  write_json(out / "report.json", rep.to_json());
  write_text(out / "report.jsonl", rep.to_jsonl());
  json extra = src.describe;
  extra["data"] = data;
  write_manifest(out, "eval", extra);
  std::cout << "MAE " << rep.mae << "  F " << rep.f << "  E " << rep.e << "  S " << rep.s << "  entropy "
            << rep.entropy << "  (" << rep.count << " images)\n";
  return 0;
}

// infer writes the mean saliency map; uncertainty adds the entropy map.
int cmd_maps(const Common& c, const std::string& data, const std::string& checkpoint, int samples, bool entropy) {
  apply_precision(c.precision);
  Source src = open_source(checkpoint, samples, c.seed);
  json skipped;
  Dataset ds = read_dataset(data, skipped);
  fs::path out(c.out);
  fs::create_directories(out);
  EvalOptions opt;
  opt.on_image = [&](const std::string& id, const Tensor& mean, const Tensor& ent) {
    if (entropy) {
      write_map_png((out / (id + "_mean.png")).string(), mean);
      write_map_png((out / (id + "_entropy.png")).string(), ent, std::log(2.0));
    } else {
      write_map_png((out / (id + ".png")).string(), mean);
    }
  };
  MetricReport rep = evaluate_dataset(src.predictor, ds, opt);
  json extra = src.describe;
  extra["data"] = data;
  extra["images"] = rep.count;
  write_manifest(out, entropy ? "uncertainty" : "infer", extra);
  std::cout << "wrote maps for " << rep.count << " images to " << out.string() << "\n";
  return 0;
}

int cmd_contrast(const Common& c, const std::string& data) {
  json skipped;
  Dataset ds = read_dataset(data, skipped);
  json j;
  auto dump = [](const ContrastReport& r) {
    json per = json::array();
    for (auto& [id, v] : r.per_image) per.push_back({{"id", id}, {"chi2", v}});
    return json{{"modality", r.modality}, {"mean", r.mean}, {"per_image", per}};
  };
  ContrastReport rgb = dataset_contrast_report(ds, "rgb");
  j["rgb"] = dump(rgb);
  std::cout << "rgb contrast " << rgb.mean;
  if (ds.has_depth()) {
    ContrastReport d = dataset_contrast_report(ds, "depth");
    j["depth"] = dump(d);
    j["difference"] = contrast_difference(ds);
    std::cout << "  depth contrast " << d.mean << "  difference " << j["difference"].get<double>();
  }
  std::cout << "\n";
  fs::create_directories(c.out);
  write_json(fs::path(c.out) / "contrast.json", j);
  write_manifest(c.out, "analyze-contrast", {{"data", data}, {"skipped", skipped}});
  return 0;
}

int cmd_fixture(const Common& c) {
  fs::create_directories(c.out);
  Checkpoint ck;
  ck.meta["fixture"] = "ground_truth";
  fs::path p = fs::path(c.out) / "fixture.ckpt";
  save_checkpoint(p.string(), ck);
  write_manifest(c.out, "make-fixture", {{"fixture", "ground_truth"}});
  std::cout << "wrote " << p.string() << "\n";
  return 0;
}

int cmd_selftest(bool full, const std::vector<int>& ids) {
  int failed = 0;
  for (const auto& chk : selftest::all_checks()) {
    if (!ids.empty() && std::find(ids.begin(), ids.end(), chk.id) == ids.end()) continue;
    if (chk.slow && !full && ids.empty()) continue;
    selftest::Result r = chk.run();
    std::cout << (r.pass ? "PASS" : "FAIL") << " [" << r.id << "] " << r.name << ": " << r.detail << " ("
              << static_cast<int>(r.seconds) << " s)" << std::endl;
    failed += !r.pass;
  }
  return failed ? 1 : 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Generative saliency models: training, evaluation and analysis"};
  app.set_version_flag("--version", SALGEN_VERSION);
  app.require_subcommand(1);

  Common common;
  std::string data, checkpoint;
  int samples = 0;
  bool resume = false, full = false;
  std::vector<int> ids;
  SynthSpec spec;

  auto* synth = app.add_subcommand("synth", "Generate a synthetic dataset");
  add_common(synth, common, false);
  synth->add_option("--count", spec.count, "Number of images")->check(CLI::PositiveNumber);
  synth->add_option("--size", spec.size, "Image side")->check(CLI::PositiveNumber);
  synth->add_option("--contrast", spec.contrast, "Foreground/background separation")->check(CLI::Range(0.0, 1.0));
  synth->add_flag("--depth", spec.with_depth, "Also write depth maps");
  synth->add_flag("--scribble", spec.with_scribble, "Also write scribbles");

  auto* train = app.add_subcommand("train", "Train a model");
  add_common(train, common, true);
  train->add_option("--data", data, "Dataset manifest")->required()->check(CLI::ExistingFile);
  train->add_flag("--resume", resume, "Continue from <out>/checkpoint.ckpt when present");

  auto* eval = app.add_subcommand("eval", "Score a checkpoint on a dataset");
  auto* infer = app.add_subcommand("infer", "Write predicted saliency maps");
  auto* unc = app.add_subcommand("uncertainty", "Write mean and entropy maps");
  for (auto* cmd : {eval, infer, unc}) {
    add_common(cmd, common, false);
    cmd->add_option("--data", data, "Dataset manifest")->required()->check(CLI::ExistingFile);
    cmd->add_option("--checkpoint", checkpoint, "Checkpoint file")->required()->check(CLI::ExistingFile);
    cmd->add_option("--samples", samples, "Prior draws per image (default: from the checkpoint config)");
  }

  auto* contrast = app.add_subcommand("analyze-contrast", "Global RGB/depth contrast of a dataset");
  add_common(contrast, common, false);
  contrast->add_option("--data", data, "Dataset manifest")->required()->check(CLI::ExistingFile);

  auto* fixture = app.add_subcommand("make-fixture", "Write a checkpoint that predicts the ground truth");
  add_common(fixture, common, false);

  auto* self = app.add_subcommand("selftest", "Run the gradient-check and oracle suites");
  self->add_flag("--full", full, "Include the training checks");
  self->add_option("ids", ids, "Only these criteria");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*synth) return cmd_synth(common, spec);
    if (*train) return cmd_train(common, data, resume);
    if (*eval) return cmd_eval(common, data, checkpoint, samples);
    if (*infer) return cmd_maps(common, data, checkpoint, samples, false);
    if (*unc) return cmd_maps(common, data, checkpoint, samples, true);
    if (*contrast) return cmd_contrast(common, data);
    if (*fixture) return cmd_fixture(common);
    if (*self) return cmd_selftest(full, ids);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    for (const auto& p : e.problems()) std::cerr << "  - " << p << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
