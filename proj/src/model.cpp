// Copyright 2026 The SasMamba Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "sasmamba/model.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

namespace sasmamba {

std::vector<std::string> ModelConfig::Violations() const {
  std::vector<std::string> out;
  if (l < 1) out.push_back("l must be >= 1");
  if (d < 4 || d % 4 != 0) out.push_back("d must be a positive multiple of 4");
  if (t < 1) out.push_back("t must be >= 1");
  if (v < 1) out.push_back("v must be >= 1");
  if (k < 1 || k % 2 == 0) out.push_back("k must be odd and >= 1");
  if (n < 1) out.push_back("n must be >= 1");
  if (mlp_ratio < 1) out.push_back("mlp_ratio must be >= 1");
  if (strides.size() != 3) out.push_back("strides must list exactly 3 values");
  for (Index s : strides) {
    if (s < 1) {
      out.push_back("each stride must be >= 1");
      break;
    }
  }
  if (streams.empty()) out.push_back("streams must not be empty");
  if (std::set<ScanStream>(streams.begin(), streams.end()).size() != streams.size()) {
    out.push_back("streams must not repeat");
  }
  return out;
}

void ModelConfig::Validate() const {
  const auto problems = Violations();
  if (problems.empty()) return;
  std::string msg = "invalid model config:";
  for (const auto& p : problems) msg += "\n  - " + p;
  Fail(ErrorKind::kConfig, msg);
}

StrideConfig ModelConfig::stride_config() const {
  StrideConfig s;
  s.strides = strides;
  return s;
}

nlohmann::ordered_json ConfigToJson(const ModelConfig& cfg) {
  nlohmann::ordered_json j;
  j["l"] = cfg.l;
  j["d"] = cfg.d;
  j["t"] = cfg.t;
  j["v"] = cfg.v;
  j["k"] = cfg.k;
  j["n"] = cfg.n;
  j["strides"] = cfg.strides;
  auto streams = nlohmann::ordered_json::array();
  for (ScanStream s : cfg.streams) streams.push_back(std::string(StreamName(s)));
  j["streams"] = streams;
  j["mlp_ratio"] = cfg.mlp_ratio;
  j["gated_streams"] = cfg.gated_streams;
  return j;
}

ModelConfig ConfigFromJson(const nlohmann::json& j) {
  if (!j.is_object()) Fail(ErrorKind::kConfig, "model config must be a JSON object");
  ModelConfig cfg;
  auto read_int = [&](const char* key, Index& dst) {
    if (!j.contains(key)) return;
    if (!j[key].is_number_integer()) {
      Fail(ErrorKind::kConfig, std::string("config field '") + key + "' must be an integer");
    }
    dst = j[key].get<Index>();
  };
  try {
    for (const auto& [key, _] : j.items()) {
      static const std::set<std::string> kKnown = {
          "l", "d", "t", "v", "k", "n", "strides", "streams", "mlp_ratio", "gated_streams"};
      if (!kKnown.count(key)) Fail(ErrorKind::kConfig, "unknown config field '" + key + "'");
    }
    read_int("l", cfg.l);
    read_int("d", cfg.d);
    read_int("t", cfg.t);
    read_int("v", cfg.v);
    read_int("k", cfg.k);
    read_int("n", cfg.n);
    read_int("mlp_ratio", cfg.mlp_ratio);
    if (j.contains("strides")) cfg.strides = j["strides"].get<std::vector<Index>>();
    if (j.contains("gated_streams")) cfg.gated_streams = j["gated_streams"].get<bool>();
    if (j.contains("streams")) {
      const auto& s = j["streams"];
      if (s.is_string()) {
        cfg.streams = StreamsFromLabel(s.get<std::string>());
      } else {
        cfg.streams.clear();
        for (const auto& name : s) cfg.streams.push_back(ParseStream(name.get<std::string>()));
      }
    }
  } catch (const nlohmann::json::exception& e) {
    Fail(ErrorKind::kConfig, std::string("malformed model config: ") + e.what());
  }
  cfg.Validate();
  return cfg;
}

ModelConfig LoadConfigFile(const std::string& path) {
  std::ifstream in(path);
  if (!in) Fail(ErrorKind::kIo, "cannot open config file '" + path + "'");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    Fail(ErrorKind::kParse, path + ": " + e.what());
  }
  return ConfigFromJson(j);
}

namespace {

template <typename Scalar>
NormParams<Scalar> InitNorm(Index channels) {
  NormParams<Scalar> p;
  p.gamma = Tensor<Scalar>::Constant({channels}, Scalar(1));
  p.beta = Tensor<Scalar>({channels});
  return p;
}

}  // namespace

template <typename Scalar>
Model<Scalar> InitModel(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.Validate();
  Rng rng(seed);
  Model<Scalar> m;
  m.config = cfg;
  const Index d = cfg.d;
  m.embed = InitLinear<Scalar>(2, d, true, rng);
  m.pos_spatial = NormalTensor<Scalar>({1, cfg.v, d}, 0.0, 0.02, rng);
  m.pos_temporal = NormalTensor<Scalar>({cfg.t, 1, d}, 0.0, 0.02, rng);
  for (Index i = 0; i < cfg.l; ++i) {
    BlockParams<Scalar> b;
    b.norm1 = InitNorm<Scalar>(d);
    b.sas.sa_conv = InitSaConv<Scalar>(d, cfg.k, rng);
    b.sas.stride = cfg.stride_config();
    b.sas.streams = InitStreamSet<Scalar>(d, cfg.n, cfg.streams, cfg.gated_streams, rng);
    b.norm2 = InitNorm<Scalar>(d);
    b.mlp_in = InitLinear<Scalar>(d, cfg.mlp_ratio * d, true, rng);
    b.mlp_out = InitLinear<Scalar>(cfg.mlp_ratio * d, d, true, rng);
    m.blocks.push_back(std::move(b));
  }
  m.head = InitLinear<Scalar>(d, 3, true, rng);
  return m;
}

template <typename Scalar>
Var<Scalar> BlockForward(const Var<Scalar>& x, const BlockParams<Scalar>& p,
                         ParamBinder<Scalar>& bind) {
  const Var<Scalar> mixed = Add(SasSsmLayer(LayerNorm(x, p.norm1, bind), p.sas, bind), x);
  const Var<Scalar> hidden = Gelu(Linear(LayerNorm(mixed, p.norm2, bind), p.mlp_in, bind));
  return Add(Linear(hidden, p.mlp_out, bind), mixed);
}

template <typename Scalar>
Var<Scalar> Forward(const Model<Scalar>& m, const Var<Scalar>& x,
                    ParamBinder<Scalar>& bind) {
  const Shape& s = x.shape();
  if (s.size() != 3 || s[1] != m.config.v || s[2] != 2 || s[0] > m.config.t) {
    Fail(ErrorKind::kDimension,
         "forward: expected [T<=" + std::to_string(m.config.t) + ", " +
             std::to_string(m.config.v) + ", 2] keypoints, got " + ShapeString(s));
  }
  CheckFinite(x.value(), "forward input");
  Var<Scalar> h = AddTiled(Linear(x, m.embed, bind), bind(m.pos_spatial));
  for (std::size_t i = 0; i < m.blocks.size(); ++i) {
    h = BlockForward(h, m.blocks[i], bind);
    if (i == 0) h = AddTiled(h, bind(m.pos_temporal));
  }
  return Linear(h, m.head, bind);
}

template <typename Scalar>
Tensor<Scalar> Predict(const Model<Scalar>& m, const Tensor<Scalar>& x) {
  ParamBinder<Scalar> constants;
  return Forward(m, Var<Scalar>::Constant(x), constants).value();
}

template <typename To, typename From>
Model<To> CastModel(const Model<From>& m) {
  Model<To> out = InitModel<To>(m.config, 0);
  std::vector<const Tensor<From>*> src;
  VisitModel(m, [&](const std::string&, const Tensor<From>& t) { src.push_back(&t); });
  std::size_t i = 0;
  VisitModel(out, [&](const std::string&, Tensor<To>& t) { t = src[i++]->template Cast<To>(); });
  return out;
}

std::vector<TensorSpec> ParamSpecs(const ModelConfig& cfg) {
  cfg.Validate();
  const Index d = cfg.d, taps = cfg.k * cfg.k, r = DefaultDtRank(cfg.d), h = cfg.mlp_ratio * d;
  std::vector<TensorSpec> specs;
  auto add = [&](std::string name, Shape shape) {
    specs.push_back({std::move(name), std::move(shape)});
  };
  add("embed.weight", {d, 2});
  add("embed.bias", {d});
  add("pos_spatial", {1, cfg.v, d});
  add("pos_temporal", {cfg.t, 1, d});
  std::vector<ScanStream> streams = cfg.streams;
  std::sort(streams.begin(), streams.end());
  for (Index i = 0; i < cfg.l; ++i) {
    const std::string b = "blocks." + std::to_string(i);
    add(b + ".norm1.gamma", {d});
    add(b + ".norm1.beta", {d});
    add(b + ".sas.sa_conv.offset.weight", {3 * taps, taps * d});
    add(b + ".sas.sa_conv.offset.bias", {3 * taps});
    add(b + ".sas.sa_conv.neighbor.weight", {taps, d});
    add(b + ".sas.sa_conv.local.weight", {9, d});
    add(b + ".sas.sa_conv.local.bias", {d});
    for (ScanStream s : streams) {
      const std::string p = b + ".sas.streams." + std::string(StreamName(s));
      add(p + ".a_log", {d, cfg.n});
      add(p + ".b_proj.weight", {cfg.n, d});
      add(p + ".c_proj.weight", {cfg.n, d});
      add(p + ".dt_down.weight", {r, d});
      add(p + ".dt_up.weight", {d, r});
      add(p + ".dt_up.bias", {d});
      add(p + ".skip", {d});
      if (cfg.gated_streams) {
        add(p + ".gate.weight", {d, d});
        add(p + ".gate.bias", {d});
      }
    }
    add(b + ".norm2.gamma", {d});
    add(b + ".norm2.beta", {d});
    add(b + ".mlp_in.weight", {h, d});
    add(b + ".mlp_in.bias", {h});
    add(b + ".mlp_out.weight", {d, h});
    add(b + ".mlp_out.bias", {d});
  }
  add("head.weight", {3, d});
  add("head.bias", {3});
  return specs;
}

namespace {

std::string ModuleKind(const std::string& name) {
  if (name.starts_with("embed")) return "embed";
  if (name.starts_with("pos_")) return "pos_embed";
  if (name.starts_with("head")) return "head";
  if (name.find(".norm") != std::string::npos) return "norm";
  if (name.find(".sa_conv.") != std::string::npos) return "sa_conv";
  if (name.find(".gate.") != std::string::npos) return "gate";
  if (name.find(".streams.") != std::string::npos) return "ssm";
  if (name.find(".mlp_") != std::string::npos) return "mlp";
  return "other";
}

}  // namespace

std::vector<CountEntry> CountReport::ByModule() const {
  std::vector<CountEntry> out;
  for (const auto& e : entries) {
    const std::string kind = ModuleKind(e.name);
    auto it = std::find_if(out.begin(), out.end(), [&](const CountEntry& o) { return o.name == kind; });
    if (it == out.end()) {
      out.push_back({kind, e.count});
    } else {
      it->count += e.count;
    }
  }
  return out;
}

CountReport CountParams(const ModelConfig& cfg) {
  CountReport report;
  for (const auto& spec : ParamSpecs(cfg)) {
    const auto count = static_cast<std::int64_t>(NumElements(spec.shape));
    report.entries.push_back({spec.name, count});
    report.total += count;
  }
  return report;
}

CountReport CountMacs(const ModelConfig& cfg, Index frames) {
  cfg.Validate();
  if (frames < 1) Fail(ErrorKind::kDomain, "count_macs: frames must be >= 1");
  using I = std::int64_t;
  const I tokens = static_cast<I>(frames) * cfg.v;
  const I d = cfg.d, n = cfg.n, taps = cfg.k * cfg.k, r = DefaultDtRank(cfg.d);
  const I h = cfg.mlp_ratio * d, layers = cfg.l;
  const I streams = static_cast<I>(cfg.streams.size());
  CountReport report;
  auto add = [&](std::string name, I macs) {
    report.entries.push_back({std::move(name), macs});
    report.total += macs;
  };
  add("embed", tokens * 2 * d);
  // Offset conv, bilinear gather (4 corners), modulation and W_k, local 3x3.
  add("sa_conv.offset", layers * tokens * (3 * taps) * (taps * d));
  add("sa_conv.sample", layers * tokens * taps * d * 4);
  add("sa_conv.fuse", layers * tokens * taps * d * 2);
  add("sa_conv.local", layers * tokens * 9 * d);
  // Per stream: B, C and low-rank dt projections; per (t, d, n) the recurrence
  // costs discretized B times u, A_bar times h, C readout, and the two ZOH
  // products.
  add("ssm.proj", layers * streams * tokens * (2 * d * n + 2 * d * r));
  add("ssm.scan", layers * streams * tokens * d * n * 5);
  add("ssm.skip", layers * streams * tokens * d);
  if (cfg.gated_streams) add("gate", layers * streams * tokens * (d * d + d));
  add("mlp", layers * tokens * 2 * d * h);
  add("head", tokens * d * 3);
  return report;
}

#define SASMAMBA_INSTANTIATE_MODEL(S)                                                \
  template Model<S> InitModel<S>(const ModelConfig&, std::uint64_t);                 \
  template Var<S> BlockForward(const Var<S>&, const BlockParams<S>&, ParamBinder<S>&); \
  template Var<S> Forward(const Model<S>&, const Var<S>&, ParamBinder<S>&);          \
  template Tensor<S> Predict(const Model<S>&, const Tensor<S>&);

SASMAMBA_INSTANTIATE_MODEL(float)
SASMAMBA_INSTANTIATE_MODEL(double)

template Model<double> CastModel<double, float>(const Model<float>&);
template Model<float> CastModel<float, double>(const Model<double>&);
template Model<float> CastModel<float, float>(const Model<float>&);
template Model<double> CastModel<double, double>(const Model<double>&);

}  // namespace sasmamba
