#include "salgen/config.hpp"

#include <cstdio>
#include <fstream>
#include <functional>
#include <set>

namespace salgen {

namespace {

using nlohmann::json;

const std::set<std::string> kHeads{"deterministic", "gan", "cvae", "abp", "igan"};
const std::set<std::string> kRegimes{"rgb_full", "rgbd_full", "rgb_weak"};

// Collects keys present in `have` but not in `ref`, recursively.
void unknown_keys(const json& have, const json& ref, const std::string& prefix, std::vector<std::string>& out) {
  for (auto it = have.begin(); it != have.end(); ++it) {
    std::string key = prefix.empty() ? it.key() : prefix + "." + it.key();
    if (!ref.contains(it.key())) {
      out.push_back(key);
    } else if (it->is_object() && ref[it.key()].is_object()) {
      unknown_keys(*it, ref[it.key()], key, out);
    } else if (it->is_object() != ref[it.key()].is_object()) {
      out.push_back(key + " (wrong type)");
    }
  }
}

template <typename T>
void read(const json& j, const char* key, T& dst, const std::string& path, std::vector<std::string>& problems) {
  if (!j.contains(key)) return;
  try {
    dst = j.at(key).get<T>();
  } catch (const json::exception&) {
    problems.push_back(path + key + " has the wrong type");
  }
}

}  // namespace

int TrainConfig::latent_dim() const {
  if (model.latent_dim >= 0) return model.latent_dim;
  return generative() ? 8 : 0;
}

NetConfig TrainConfig::net_config() const {
  NetConfig n;
  auto& e = n.encoder;
  e.image_size = model.image_size;
  e.patch_size = model.patch_size;
  e.window_size = model.window_size;
  e.mlp_ratio = model.mlp_ratio;
  e.depths = model.depths;
  e.num_heads = model.num_heads;
  e.stage_channels = model.stage_channels;
  n.decoder.channels = model.decoder_channels;
  n.decoder.reduce_kernel = model.reduce_kernel;
  n.decoder.zero_init_head = model.zero_init_head;
  n.latent_dim = latent_dim();
  n.early_fusion = regime == "rgbd_full";
  n.depth_head = regime == "rgbd_full" && model.depth_head;
  n.cvae = head == "cvae";
  n.disc_channels = model.disc_channels;
  return n;
}

void TrainConfig::validate() const {
  std::vector<std::string> p;
  if (!kHeads.count(head)) p.push_back("head must be one of deterministic|gan|cvae|abp|igan, got '" + head + "'");
  if (!kRegimes.count(regime)) p.push_back("regime must be one of rgb_full|rgbd_full|rgb_weak, got '" + regime + "'");
  if (epochs < 1) p.push_back("epochs must be >= 1");
  if (batch_size < 1) p.push_back("batch_size must be >= 1");
  if (max_steps < 0) p.push_back("max_steps must be >= 0");
  if (precision != "f32" && precision != "f64") p.push_back("precision must be f32 or f64");
  if (eval_samples < 1) p.push_back("eval_samples must be >= 1");
  if (generative() && latent_dim() < 1) p.push_back("generative heads need model.latent_dim >= 1");
  if (model.reduce_kernel < 1 || model.reduce_kernel % 2 == 0) p.push_back("model.reduce_kernel must be odd");
  auto guard = [&p](const char* what, const std::function<void()>& f) {
    try {
      f();
    } catch (const std::exception& e) {
      p.push_back(std::string(what) + ": " + e.what());
    }
  };
  guard("optimizer", [&] { optimizer.validate(); });
  guard("weights", [&] { weights.validate(); });
  guard("langevin", [&] { langevin.validate(); });
  guard("model", [&] { net_config().encoder.validate(); });
  if (gated_crf.radius < 1 || !(gated_crf.sigma_p > 0) || !(gated_crf.sigma_c > 0)) {
    p.push_back("gated_crf needs radius >= 1 and positive sigmas");
  }
  if (!p.empty()) {
    std::string msg = "invalid config:";
    for (const auto& s : p) msg += "\n  " + s;
    throw ConfigError(msg, p);
  }
}

json to_json(const TrainConfig& c) {
  return json{
      {"head", c.head},
      {"regime", c.regime},
      {"epochs", c.epochs},
      {"batch_size", c.batch_size},
      {"max_steps", c.max_steps},
      {"seed", c.seed},
      {"precision", c.precision},
      {"eval_samples", c.eval_samples},
      {"optimizer",
       {{"kind", c.optimizer.kind},
        {"lr", c.optimizer.lr},
        {"beta1", c.optimizer.beta1},
        {"beta2", c.optimizer.beta2},
        {"eps", c.optimizer.eps},
        {"weight_decay", c.optimizer.weight_decay},
        {"momentum", c.optimizer.momentum}}},
      {"weights",
       {{"lambda_adv", c.weights.lambda_adv},
        {"alpha_depth", c.weights.alpha_depth},
        {"beta_ssim", c.weights.beta_ssim},
        {"alpha_ss", c.weights.alpha_ss},
        {"lambda1", c.weights.lambda1},
        {"lambda2", c.weights.lambda2},
        {"lambda3", c.weights.lambda3}}},
      {"langevin",
       {{"step_size", c.langevin.step_size},
        {"sigma2", c.langevin.sigma2},
        {"steps", c.langevin.steps},
        {"divergence_threshold", c.langevin.divergence_threshold}}},
      {"gated_crf", {{"radius", c.gated_crf.radius}, {"sigma_p", c.gated_crf.sigma_p}, {"sigma_c", c.gated_crf.sigma_c}}},
      {"model",
       {{"image_size", c.model.image_size},
        {"patch_size", c.model.patch_size},
        {"window_size", c.model.window_size},
        {"mlp_ratio", c.model.mlp_ratio},
        {"depths", c.model.depths},
        {"num_heads", c.model.num_heads},
        {"stage_channels", c.model.stage_channels},
        {"latent_dim", c.model.latent_dim},
        {"decoder_channels", c.model.decoder_channels},
        {"reduce_kernel", c.model.reduce_kernel},
        {"disc_channels", c.model.disc_channels},
        {"depth_head", c.model.depth_head},
        {"zero_init_head", c.model.zero_init_head}}},
  };
}

TrainConfig config_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  TrainConfig c;
  std::vector<std::string> unknown;
  unknown_keys(j, to_json(c), "", unknown);
  if (!unknown.empty()) {
    std::string msg = "unknown config keys:";
    for (const auto& k : unknown) msg += " " + k;
    throw ConfigError(msg, unknown);
  }
  std::vector<std::string> p;
  read(j, "head", c.head, "", p);
  read(j, "regime", c.regime, "", p);
  read(j, "epochs", c.epochs, "", p);
  read(j, "batch_size", c.batch_size, "", p);
  read(j, "max_steps", c.max_steps, "", p);
  read(j, "seed", c.seed, "", p);
  read(j, "precision", c.precision, "", p);
  read(j, "eval_samples", c.eval_samples, "", p);
  if (j.contains("optimizer")) {
    const auto& o = j["optimizer"];
    read(o, "kind", c.optimizer.kind, "optimizer.", p);
    read(o, "lr", c.optimizer.lr, "optimizer.", p);
    read(o, "beta1", c.optimizer.beta1, "optimizer.", p);
    read(o, "beta2", c.optimizer.beta2, "optimizer.", p);
    read(o, "eps", c.optimizer.eps, "optimizer.", p);
    read(o, "weight_decay", c.optimizer.weight_decay, "optimizer.", p);
    read(o, "momentum", c.optimizer.momentum, "optimizer.", p);
  }
  if (j.contains("weights")) {
    const auto& w = j["weights"];
    read(w, "lambda_adv", c.weights.lambda_adv, "weights.", p);
    read(w, "alpha_depth", c.weights.alpha_depth, "weights.", p);
    read(w, "beta_ssim", c.weights.beta_ssim, "weights.", p);
    read(w, "alpha_ss", c.weights.alpha_ss, "weights.", p);
    read(w, "lambda1", c.weights.lambda1, "weights.", p);
    read(w, "lambda2", c.weights.lambda2, "weights.", p);
    read(w, "lambda3", c.weights.lambda3, "weights.", p);
  }
  if (j.contains("langevin")) {
    const auto& l = j["langevin"];
    read(l, "step_size", c.langevin.step_size, "langevin.", p);
    read(l, "sigma2", c.langevin.sigma2, "langevin.", p);
    read(l, "steps", c.langevin.steps, "langevin.", p);
    read(l, "divergence_threshold", c.langevin.divergence_threshold, "langevin.", p);
  }
  if (j.contains("gated_crf")) {
    const auto& g = j["gated_crf"];
    read(g, "radius", c.gated_crf.radius, "gated_crf.", p);
    read(g, "sigma_p", c.gated_crf.sigma_p, "gated_crf.", p);
    read(g, "sigma_c", c.gated_crf.sigma_c, "gated_crf.", p);
  }
  if (j.contains("model")) {
    const auto& m = j["model"];
    read(m, "image_size", c.model.image_size, "model.", p);
    read(m, "patch_size", c.model.patch_size, "model.", p);
    read(m, "window_size", c.model.window_size, "model.", p);
    read(m, "mlp_ratio", c.model.mlp_ratio, "model.", p);
    read(m, "depths", c.model.depths, "model.", p);
    read(m, "num_heads", c.model.num_heads, "model.", p);
    read(m, "stage_channels", c.model.stage_channels, "model.", p);
    read(m, "latent_dim", c.model.latent_dim, "model.", p);
    read(m, "decoder_channels", c.model.decoder_channels, "model.", p);
    read(m, "reduce_kernel", c.model.reduce_kernel, "model.", p);
    read(m, "disc_channels", c.model.disc_channels, "model.", p);
    read(m, "depth_head", c.model.depth_head, "model.", p);
    read(m, "zero_init_head", c.model.zero_init_head, "model.", p);
  }
  if (!p.empty()) {
    std::string msg = "invalid config values:";
    for (const auto& s : p) msg += "\n  " + s;
    throw ConfigError(msg, p);
  }
  c.validate();
  return c;
}

TrainConfig load_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config " + path);
  try {
    return config_from_json(json::parse(is));
  } catch (const json::parse_error& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

json apply_overrides(json j, const std::vector<std::string>& overrides) {
  const json ref = to_json(TrainConfig{});
  std::vector<std::string> bad;
  for (const auto& o : overrides) {
    auto eq = o.find('=');
    if (eq == std::string::npos || eq == 0) {
      bad.push_back(o + " (expected key=value)");
      continue;
    }
    std::string key = o.substr(0, eq), value = o.substr(eq + 1);
    json::json_pointer ptr;
    std::size_t start = 0;
    while (true) {
      auto dot = key.find('.', start);
      ptr /= key.substr(start, dot - start);
      if (dot == std::string::npos) break;
      start = dot + 1;
    }
    if (!ref.contains(ptr) || ref.at(ptr).is_object()) {
      bad.push_back(key);
      continue;
    }
    json v;
    try {
      v = json::parse(value);
    } catch (const json::parse_error&) {
      v = value;
    }
    j[ptr] = v;
  }
  if (!bad.empty()) {
    std::string msg = "unknown config keys in overrides:";
    for (const auto& k : bad) msg += " " + k;
    throw ConfigError(msg, bad);
  }
  return j;
}

std::string config_hash(const json& j) {
  std::string s = j.dump();
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001B3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

Precision parse_precision(const std::string& s) {
  if (s == "f32") return Precision::f32;
  if (s == "f64") return Precision::f64;
  throw ConfigError("precision must be f32 or f64, got " + s);
}

}  // namespace salgen
