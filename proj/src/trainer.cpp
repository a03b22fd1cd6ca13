#include "salgen/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <ostream>

#include "salgen/checkpoint.hpp"
#include "salgen/losses.hpp"
#include "salgen/ops.hpp"

namespace salgen {

namespace {

using nlohmann::json;

Tensor select_rows(const Tensor& t, const std::vector<std::int64_t>& rows) {
  if (!t.defined()) return t;
  std::vector<Tensor> parts;
  parts.reserve(rows.size());
  for (auto r : rows) parts.push_back(slice(t, 0, r, r + 1));
  return parts.size() == 1 ? parts.front() : concat(parts, 0);
}

Batch select_batch(const Batch& b, const std::vector<std::int64_t>& rows) {
  Batch out;
  out.image = select_rows(b.image, rows);
  out.gt = select_rows(b.gt, rows);
  out.depth = select_rows(b.depth, rows);
  out.scribble.target = select_rows(b.scribble.target, rows);
  out.scribble.mask = select_rows(b.scribble.mask, rows);
  for (auto r : rows) out.ids.push_back(b.ids[static_cast<std::size_t>(r)]);
  return out;
}

double grad_norm(const ParamStore& ps) {
  double s = 0.0;
  for (const auto& [name, t] : ps.entries()) {
    if (!t.has_grad()) continue;
    for (double g : t.grad()) s += g * g;
  }
  return std::sqrt(s);
}

// The comparable part of a config: everything except the run length.
json resumable_view(const TrainConfig& c) {
  json j = to_json(c);
  j.erase("epochs");
  j.erase("max_steps");
  return j;
}

}  // namespace

Model::Model(const TrainConfig& cfg) : config(cfg), gen(cfg.net_config(), cfg.seed) {
  if (cfg.adversarial()) disc = std::make_unique<Discriminator>(3, cfg.model.disc_channels, cfg.seed);
}

Tensor Model::input(const Batch& b) const {
  if (!gen.config().early_fusion) return b.image;
  if (!b.depth.defined()) throw DataError("rgbd model needs depth maps");
  return gen.fuse(b.image, b.depth);
}

std::unique_ptr<Model> load_model(const std::string& path) {
  Checkpoint ck = load_checkpoint(path);
  if (!ck.meta.contains("config")) throw CheckpointError(path + ": no config in checkpoint");
  TrainConfig cfg = config_from_json(ck.meta["config"]);
  auto m = std::make_unique<Model>(cfg);
  restore_params(m->gen.params(), ck);
  if (m->disc) restore_params(m->disc->params(), ck);
  return m;
}

double StepRecord::component_sum() const {
  double s = 0.0;
  for (const auto& [k, v] : components) s += v;
  return s;
}

json StepRecord::to_json() const {
  json comp = json::object();
  for (const auto& [k, v] : components) comp[k] = v;
  json j{{"step", step},       {"epoch", epoch},         {"loss", total},
         {"components", comp}, {"grad_norm", grad_norm}, {"wall_time", seconds}};
  if (has_dis) j["dis_loss"] = dis;
  if (has_train_mae) j["train_mae"] = train_mae;
  if (rotation_k) j["rotation_k"] = rotation_k;
  if (!skipped.empty()) j["skipped"] = skipped;
  if (update_skipped) j["update_skipped"] = true;
  return j;
}

Trainer::Trainer(const TrainConfig& cfg, const Dataset& ds) : cfg_(cfg), ds_(ds) {
  cfg_.validate();
  if (ds.size() == 0) throw DataError("training set is empty");
  for (const auto& s : ds.samples) {
    if (s.height() != cfg_.model.image_size || s.width() != cfg_.model.image_size) {
      throw DataError("sample " + s.id + " is " + std::to_string(s.height()) + "x" + std::to_string(s.width()) +
                      ", model expects " + std::to_string(cfg_.model.image_size));
    }
  }
  if (cfg_.regime == "rgbd_full" && !ds.has_depth()) throw DataError("rgbd_full needs depth for every sample");
  if (cfg_.regime == "rgb_weak" && !ds.has_scribble()) throw DataError("rgb_weak needs scribbles for every sample");
  set_precision(parse_precision(cfg_.precision));
  model_ = std::make_unique<Model>(cfg_);
  gen_opt_ = make_optimizer(cfg_.optimizer);
  if (model_->disc) disc_opt_ = make_optimizer(cfg_.optimizer);
}

bool Trainer::finished() const {
  if (cfg_.max_steps > 0 && step_ >= cfg_.max_steps) return true;
  return epoch_ >= cfg_.epochs;
}

std::vector<std::size_t> Trainer::epoch_order(int epoch) const {
  std::vector<std::size_t> order(ds_.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(derive_seed(derive_seed(cfg_.seed, "shuffle"), static_cast<std::uint64_t>(epoch)));
  std::shuffle(order.begin(), order.end(), rng.engine());
  return order;
}

void Trainer::run(std::ostream* log, const std::string& checkpoint_path) {
  const auto bs = static_cast<std::size_t>(cfg_.batch_size);
  const std::size_t per_epoch = (ds_.size() + bs - 1) / bs;
  while (!finished()) {
    auto order = epoch_order(epoch_);
    while (batch_in_epoch_ < per_epoch && !finished()) {
      std::size_t lo = batch_in_epoch_ * bs, hi = std::min(lo + bs, ds_.size());
      std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(lo),
                                   order.begin() + static_cast<std::ptrdiff_t>(hi));
      StepRecord rec = train_step(idx);
      ++batch_in_epoch_;
      if (log) *log << rec.to_json().dump() << '\n' << std::flush;
      history_.push_back(std::move(rec));
    }
    if (batch_in_epoch_ >= per_epoch) {
      ++epoch_;
      batch_in_epoch_ = 0;
    }
    if (!checkpoint_path.empty()) save(checkpoint_path);
  }
}

StepRecord Trainer::train_step(const std::vector<std::size_t>& indices) {
  auto t0 = std::chrono::steady_clock::now();
  Model& m = *model_;
  Generator& gen = m.gen;
  const auto& w = cfg_.weights;
  const bool weak = cfg_.regime == "rgb_weak";
  const int K = gen.config().latent_dim;

  StepRecord rec;
  rec.step = step_;
  rec.epoch = epoch_;
  Batch batch = make_batch(ds_, indices);

  const std::uint64_t latent_base = derive_seed(derive_seed(cfg_.seed, "latent"), static_cast<std::uint64_t>(step_));
  std::vector<Rng> rngs;
  for (auto i : indices) rngs.push_back(Rng::for_stream(latent_base, i));

  // Target map that drives inference and the discriminator's "real" input.
  auto target_of = [weak](const Batch& b) { return weak ? b.scribble.target : b.gt; };
  auto mask_of = [weak](const Batch& b) { return weak ? b.scribble.mask : Tensor(); };

  Tensor h;
  if (cfg_.uses_langevin()) {
    FeaturePyramid pyr0;
    {
      NoGradGuard ng;
      pyr0 = gen.encode(m.input(batch));
    }
    LatentModel lm = [&](const Tensor& hh) { return gen.decode_saliency(gen.with_latent(pyr0, hh)); };
    LatentState st;
    try {
      FrozenParams fz(gen.params());
      st = langevin_infer(lm, target_of(batch), cfg_.langevin, rngs, K, Tensor(), Link::sigmoid, mask_of(batch));
    } catch (const LangevinError&) {
      rec.update_skipped = true;
      rec.skipped = batch.ids;
    }
    if (!rec.update_skipped) {
      std::vector<std::int64_t> keep;
      for (std::size_t c = 0; c < st.diverged.size(); ++c) {
        if (st.diverged[c]) {
          rec.skipped.push_back(batch.ids[c]);
        } else {
          keep.push_back(static_cast<std::int64_t>(c));
        }
      }
      if (keep.empty()) {
        rec.update_skipped = true;
      } else if (keep.size() < st.diverged.size()) {
        batch = select_batch(batch, keep);
        h = select_rows(st.h, keep);
      } else {
        h = st.h;
      }
    }
    if (rec.update_skipped) {
      ++step_;
      rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      return rec;
    }
  } else if (K > 0 && !gen.config().cvae) {
    std::vector<double> v;
    for (auto& r : rngs) {
      for (int j = 0; j < K; ++j) v.push_back(r.normal());
    }
    h = Tensor::from({static_cast<std::int64_t>(rngs.size()), K}, std::move(v));
  }

  // Generator step.
  gen.params().zero_grad();
  Tensor x_in = m.input(batch);
  FeaturePyramid pyr = gen.encode(x_in);
  Tensor kl;
  if (gen.config().cvae) {
    GaussianParams q = gen.posterior(pyr, target_of(batch));
    GaussianParams p = gen.prior(pyr);
    std::vector<double> eps;
    for (auto& r : rngs) {
      for (int j = 0; j < K; ++j) eps.push_back(r.normal());
    }
    Tensor e = Tensor::from(q.mu.shape(), std::move(eps));
    h = q.mu + exp(q.logvar * 0.5) * e;
    kl = kl_diag_gaussian(q.mu, q.logvar, p.mu, p.logvar);
  }
  FeaturePyramid pyr_h = K > 0 ? gen.with_latent(pyr, h) : pyr;
  Tensor logits = gen.decode_saliency(pyr_h);

  Tensor total;
  if (weak) {
    rec.rotation_k = static_cast<int>(
        Rng(derive_seed(derive_seed(cfg_.seed, "rotation"), static_cast<std::uint64_t>(step_))).uniform_int(1, 3));
    FeaturePyramid rp = gen.encode(rot90(x_in, rec.rotation_k));
    if (K > 0) rp = gen.with_latent(rp, h);
    Tensor rot_logits = gen.decode_saliency(rp);
    WeakParts wp = weak_loss(logits, rot_logits, rec.rotation_k, batch.image, batch.scribble, w, cfg_.gated_crf);
    total = wp.total;
    rec.components = {{"pce", wp.pce.item()},
                      {"smooth", w.lambda1 * wp.smooth.item()},
                      {"gcrf", w.lambda2 * wp.gcrf.item()},
                      {"ss", w.lambda3 * wp.ss.item()}};
  } else {
    total = structure_loss(logits, batch.gt);
    rec.components = {{"structure", total.item()}};
  }

  Tensor prob = sigmoid(logits);
  if (m.disc) {
    FrozenParams fz(m.disc->params());
    Tensor d_fake = (*m.disc)(batch.image, prob);
    Tensor adv = weak ? masked_bce_prob(d_fake, Tensor::ones(d_fake.shape()), batch.scribble.mask)
                      : adversarial_loss(d_fake);
    Tensor wadv = adv * w.lambda_adv;
    total = total + wadv;
    rec.components.emplace_back("adv", wadv.item());
  }
  if (kl.defined()) {
    total = total + kl;
    rec.components.emplace_back("kl", kl.item());
  }
  if (gen.config().depth_head) {
    DepthParts dp = depth_loss(gen.decode_depth(pyr), batch.depth, w);
    total = total + dp.total;
    rec.components.emplace_back("depth", dp.total.item());
  }
  rec.total = total.item();
  if (!weak) {
    rec.has_train_mae = true;
    auto pv = prob.data(), gv = batch.gt.data();
    double s = 0.0;
    for (std::size_t i = 0; i < pv.size(); ++i) s += std::abs(pv[i] - gv[i]);
    rec.train_mae = s / static_cast<double>(pv.size());
  }
  Tensor fake = prob.detach();
  backward(total);
  rec.grad_norm = grad_norm(gen.params());
  const std::uint64_t disc_before = m.disc ? m.disc->params().hash() : 0;
  gen_opt_->step(gen.params());
  if (m.disc && m.disc->params().hash() != disc_before) {
    throw std::logic_error("generator update changed discriminator parameters");
  }

  // Discriminator step on the detached prediction.
  if (m.disc) {
    Discriminator& d = *m.disc;
    d.params().zero_grad();
    Tensor d_fake = d(batch.image, fake);
    Tensor d_real = d(batch.image, target_of(batch));
    Tensor dis;
    if (weak) {
      const Tensor& mk = batch.scribble.mask;
      dis = masked_bce_prob(d_fake, Tensor::zeros(d_fake.shape()), mk) +
            masked_bce_prob(d_real, Tensor::ones(d_real.shape()), mk);
    } else {
      dis = discriminator_loss(d_fake, d_real);
    }
    rec.has_dis = true;
    rec.dis = dis.item();
    backward(dis);
    const std::uint64_t gen_before = gen.params().hash();
    disc_opt_->step(d.params());
    if (gen.params().hash() != gen_before) throw std::logic_error("discriminator update changed generator parameters");
  }

  ++step_;
  rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return rec;
}

void Trainer::save(const std::string& path) const {
  Checkpoint ck;
  ck.meta["config"] = to_json(cfg_);
  ck.meta["config_hash"] = config_hash(to_json(cfg_));
  ck.meta["step"] = step_;
  ck.meta["epoch"] = epoch_;
  ck.meta["batch_in_epoch"] = batch_in_epoch_;
  ck.put("", model_->gen.params());
  gen_opt_->save_state(ck, "gen");
  if (model_->disc) {
    ck.put("", model_->disc->params());
    disc_opt_->save_state(ck, "disc");
  }
  auto dir = std::filesystem::path(path).parent_path();
  if (!dir.empty()) std::filesystem::create_directories(dir);
  save_checkpoint(path, ck);
}

void Trainer::resume(const std::string& path) {
  Checkpoint ck = load_checkpoint(path);
  if (!ck.meta.contains("config")) throw CheckpointError(path + ": no config in checkpoint");
  TrainConfig stored = config_from_json(ck.meta["config"]);
  if (resumable_view(stored) != resumable_view(cfg_)) {
    throw CheckpointError(path + ": checkpoint was written with a different config");
  }
  restore_params(model_->gen.params(), ck);
  gen_opt_->load_state(ck, "gen", model_->gen.params());
  if (model_->disc) {
    restore_params(model_->disc->params(), ck);
    disc_opt_->load_state(ck, "disc", model_->disc->params());
  }
  step_ = ck.meta.at("step").get<std::int64_t>();
  epoch_ = ck.meta.at("epoch").get<int>();
  batch_in_epoch_ = ck.meta.at("batch_in_epoch").get<std::size_t>();
}

Uncertainty predict(const Model& m, const Batch& b, const std::vector<std::uint64_t>& keys, int n_samples,
                    std::uint64_t seed) {
  if (n_samples < 1) throw std::invalid_argument("predict needs n_samples >= 1");
  const auto rows = b.image.dim(0);
  if (static_cast<std::int64_t>(keys.size()) != rows) throw std::invalid_argument("predict: one key per row");
  NoGradGuard ng;
  const Generator& gen = m.gen;
  const int K = gen.config().latent_dim;
  FeaturePyramid pyr = gen.encode(m.input(b));

  Uncertainty u;
  if (!m.config.generative()) {
    FeaturePyramid p = K > 0 ? gen.with_latent(pyr, Tensor::zeros({rows, K})) : pyr;
    u.mean = sigmoid(gen.decode_saliency(p));
    u.entropy = binary_entropy(u.mean);
    return u;
  }
  const std::uint64_t base = derive_seed(seed, "predict");
  std::vector<Rng> rngs;
  for (auto k : keys) rngs.push_back(Rng::for_stream(base, k));
  GaussianParams prior;
  if (gen.config().cvae) prior = gen.prior(pyr);

  std::vector<std::vector<double>> maps;
  Shape shape;
  for (int i = 0; i < n_samples; ++i) {
    std::vector<double> v;
    for (auto& r : rngs) {
      for (int j = 0; j < K; ++j) v.push_back(r.normal());
    }
    Tensor h = Tensor::from({rows, K}, std::move(v));
    if (prior.mu.defined()) h = prior.mu + exp(prior.logvar * 0.5) * h;
    Tensor p = sigmoid(gen.decode_saliency(gen.with_latent(pyr, h)));
    shape = p.shape();
    maps.push_back(p.to_vector());
  }
  u.mean = Tensor::from(shape, stable_mean(maps));
  u.entropy = binary_entropy(u.mean);
  return u;
}

}  // namespace salgen
