// Copyright 2026 The bevsim Authors
// SPDX-License-Identifier: Apache-2.0

#include "bevsim/gcm.hpp"

#include <fmt/format.h>

namespace bevsim::gcm {

json to_json(const GcmConfig& c) {
  return {{"heads", c.heads}, {"points", c.points}, {"layers", c.layers}, {"init_radius", c.init_radius}};
}

GcmConfig gcm_config_from_json(const json& j, const std::string& section) {
  GcmConfig c;
  FieldReader r(j, section);
  r.get("heads", c.heads);
  r.get("points", c.points);
  r.get("layers", c.layers);
  r.get("init_radius", c.init_radius);
  r.finish();
  require(c.heads >= 1 && c.points >= 1 && c.layers >= 0, "{}: heads and points must be >= 1, layers >= 0", section);
  return c;
}

Tensor reference_grid(int64_t h, int64_t w) {
  require(h > 0 && w > 0, "reference grid needs positive size");
  std::vector<double> v;
  v.reserve(static_cast<size_t>(h * w * 2));
  for (int64_t i = 0; i < h; ++i)
    for (int64_t j = 0; j < w; ++j) {
      v.push_back((static_cast<double>(i) + 0.5) / static_cast<double>(h));
      v.push_back((static_cast<double>(j) + 0.5) / static_cast<double>(w));
    }
  return Tensor({h * w, 2}, std::move(v));
}

DeformAttn::DeformAttn(int64_t channels, int heads_, int points_, double init_radius, Rng& rng)
    : heads(heads_), points(points_) {
  require(channels % heads == 0, "deformable attention: {} channels not divisible by {} heads", channels, heads);
  query = nn::Linear(channels, channels, rng);
  offset = nn::Linear::zeros(channels, int64_t{heads} * points * 2);
  attention = nn::Linear(channels, int64_t{heads} * points, rng);
  value = nn::Linear(channels, channels, rng);
  output = nn::Linear::zeros(channels, channels);
  radius = nn::constant_param({1}, init_radius);
}

Tensor DeformAttn::operator()(const Tensor& f, AttentionTrace* trace) const {
  const int64_t c = channels();
  require(f.rank() == 3 && f.dim(0) == c, "deformable attention expects [{} x H x W], got {}", c,
          ad::to_string(f.shape()));
  const int64_t h = f.dim(1), w = f.dim(2), n = h * w;
  const int64_t k = points, ch = c / heads;

  const Tensor x = ad::transpose(ad::reshape(f, {c, n}));  // [N x C]
  const Tensor q = query(x);
  const Tensor off = ad::mul(ad::tanh(offset(q)), radius);  // [N x M*K*2]
  const Tensor logits = attention(q);                        // [N x M*K]
  const Tensor v = value(x);

  // Reference point repeated for each of the K samples of a head.
  const Tensor ref = reference_grid(h, w);
  std::vector<double> rep(static_cast<size_t>(n * k * 2));
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < k; ++j) {
      rep[(i * k + j) * 2] = ref[2 * i];
      rep[(i * k + j) * 2 + 1] = ref[2 * i + 1];
    }
  const Tensor ref_rep({n * k, 2}, std::move(rep));

  if (trace) {
    trace->locations.assign(static_cast<size_t>(n * heads * k * 2), 0.0);
    trace->weights.assign(static_cast<size_t>(n * heads * k), 0.0);
  }
  std::vector<Tensor> heads_out;
  for (int m = 0; m < heads; ++m) {
    const Tensor off_m = ad::reshape(ad::slice(off, 1, m * k * 2, (m + 1) * k * 2), {n * k, 2});
    const Tensor loc = ad::clamp(ad::add(off_m, ref_rep), 0.0, 1.0);
    const Tensor attn = ad::softmax(ad::slice(logits, 1, m * k, (m + 1) * k), 1);  // [N x K]
    const Tensor v_map = ad::reshape(ad::transpose(ad::slice(v, 1, m * ch, (m + 1) * ch)), {ch, h, w});
    heads_out.push_back(ad::group_weighted_sum(ad::bilinear_sample(v_map, loc), attn));
    if (trace) {
      for (int64_t i = 0; i < n; ++i)
        for (int64_t j = 0; j < k; ++j) {
          const int64_t dst = (i * heads + m) * k + j;
          trace->weights[dst] = attn[i * k + j];
          trace->locations[2 * dst] = loc[2 * (i * k + j)];
          trace->locations[2 * dst + 1] = loc[2 * (i * k + j) + 1];
        }
    }
  }
  const Tensor merged = heads == 1 ? heads_out[0] : ad::concat(heads_out, 1);
  const Tensor y = ad::reshape(ad::transpose(output(merged)), {c, h, w});
  return ad::add(f, y);
}

void DeformAttn::params(const std::string& prefix, nn::ParamList& out) const {
  query.params(nn::join(prefix, "query"), out);
  offset.params(nn::join(prefix, "offset"), out);
  attention.params(nn::join(prefix, "attention"), out);
  value.params(nn::join(prefix, "value"), out);
  output.params(nn::join(prefix, "output"), out);
  out.push_back({nn::join(prefix, "radius"), radius});
}

void DeformAttn::randomize(Rng& rng, double scale) {
  for (Tensor t : {offset.weight, offset.bias, output.weight, output.bias})
    for (auto& x : t.mutable_data()) x = rng.uniform(-scale, scale);
}

GcmStack::GcmStack(int64_t channels, const GcmConfig& cfg, Rng& rng) {
  for (int i = 0; i < cfg.layers; ++i) layers.emplace_back(channels, cfg.heads, cfg.points, cfg.init_radius, rng);
}

Tensor GcmStack::operator()(const Tensor& f, std::vector<AttentionTrace>* traces) const {
  Tensor x = f;
  if (traces) traces->assign(layers.size(), {});
  for (size_t i = 0; i < layers.size(); ++i) x = layers[i](x, traces ? &(*traces)[i] : nullptr);
  return x;
}

void GcmStack::params(const std::string& prefix, nn::ParamList& out) const {
  for (size_t i = 0; i < layers.size(); ++i) layers[i].params(nn::join(prefix, fmt::format("layer{}", i)), out);
}

void GcmStack::randomize(Rng& rng, double scale) {
  for (auto& l : layers) l.randomize(rng, scale);
}

}  // namespace bevsim::gcm
