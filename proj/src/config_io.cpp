#include "cadsim/config_io.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace cadsim {

using nlohmann::json;

namespace {

json parse(const std::string& text) {
  json j = json::parse(text, nullptr, /*allow_exceptions=*/false);
  if (j.is_discarded()) throw ConfigError("invalid JSON");
  return j;
}

void reject_unknown(const json& j, std::initializer_list<const char*> keys,
                    const char* what) {
  for (const auto& [key, value] : j.items()) {
    (void)value;
    bool ok = false;
    for (const char* k : keys) {
      if (key == k) {
        ok = true;
        break;
      }
    }
    if (!ok) throw ConfigError(std::string("unknown key in ") + what + ": " + key);
  }
}

template <typename T>
void get_if(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

json model_json(const ModelConfig& m) {
  return json{{"num_layers", m.num_layers},
              {"hidden", m.hidden},
              {"kv_hidden", m.kv_hidden},
              {"ffn_intermediate", m.ffn_intermediate},
              {"head_dim", m.head_dim},
              {"num_heads", m.num_heads},
              {"gqa_groups", m.gqa_groups},
              {"bytes_per_element", m.bytes_per_element},
              {"size_q", m.size_q},
              {"size_kv", m.size_kv},
              {"kv_counts_both", m.kv_counts_both}};
}

ModelConfig model_from(const json& j) {
  reject_unknown(j,
                 {"num_layers", "hidden", "kv_hidden", "ffn_intermediate",
                  "head_dim", "num_heads", "gqa_groups", "bytes_per_element",
                  "size_q", "size_kv", "kv_counts_both"},
                 "model");
  ModelConfig m;
  get_if(j, "num_layers", m.num_layers);
  get_if(j, "hidden", m.hidden);
  get_if(j, "kv_hidden", m.kv_hidden);
  get_if(j, "ffn_intermediate", m.ffn_intermediate);
  get_if(j, "head_dim", m.head_dim);
  get_if(j, "num_heads", m.num_heads);
  get_if(j, "gqa_groups", m.gqa_groups);
  get_if(j, "bytes_per_element", m.bytes_per_element);
  get_if(j, "size_q", m.size_q);
  get_if(j, "size_kv", m.size_kv);
  get_if(j, "kv_counts_both", m.kv_counts_both);
  return derive_sizes(m);
}

json cluster_json(const ClusterConfig& c) {
  return json{{"num_gpus", c.num_gpus},
              {"tp", c.tp},
              {"pp", c.pp},
              {"dp", c.dp},
              {"cp", c.cp},
              {"interconnect_bandwidth", c.interconnect_bandwidth},
              {"peak_flops", c.peak_flops},
              {"mfu_linear", c.mfu_linear},
              {"tile_size", c.tile_size},
              {"memory_capacity", c.memory_capacity}};
}

ClusterConfig cluster_from(const json& j) {
  reject_unknown(j,
                 {"num_gpus", "tp", "pp", "dp", "cp", "interconnect_bandwidth",
                  "peak_flops", "mfu_linear", "tile_size", "memory_capacity"},
                 "cluster");
  ClusterConfig c;
  get_if(j, "num_gpus", c.num_gpus);
  get_if(j, "tp", c.tp);
  get_if(j, "pp", c.pp);
  get_if(j, "dp", c.dp);
  get_if(j, "cp", c.cp);
  get_if(j, "interconnect_bandwidth", c.interconnect_bandwidth);
  get_if(j, "peak_flops", c.peak_flops);
  get_if(j, "mfu_linear", c.mfu_linear);
  get_if(j, "tile_size", c.tile_size);
  get_if(j, "memory_capacity", c.memory_capacity);
  return c;
}

const char* dist_kind_name(DistKind k) {
  switch (k) {
    case DistKind::pretrain_upsampled: return "pretrain_upsampled";
    case DistKind::prolong_like: return "prolong_like";
    case DistKind::uniform: return "uniform";
    case DistKind::fixed: return "fixed";
    case DistKind::custom_histogram: return "custom_histogram";
  }
  return "fixed";
}

DistKind dist_kind_from(const std::string& s) {
  if (s == "pretrain_upsampled") return DistKind::pretrain_upsampled;
  if (s == "prolong_like") return DistKind::prolong_like;
  if (s == "uniform") return DistKind::uniform;
  if (s == "fixed") return DistKind::fixed;
  if (s == "custom_histogram") return DistKind::custom_histogram;
  throw ConfigError("unknown distribution kind: " + s);
}

json dist_json(const LengthDistribution& d) {
  json j{{"kind", dist_kind_name(d.kind)},
         {"max_doc_len", d.max_doc_len},
         {"min_len_threshold", d.min_len_threshold},
         {"seed", d.seed},
         {"log_mu", d.log_mu},
         {"log_sigma", d.log_sigma},
         {"upsample_drop_prob", d.upsample_drop_prob},
         {"long_mix_weight", d.long_mix_weight},
         {"long_log_mu", d.long_log_mu},
         {"long_log_sigma", d.long_log_sigma},
         {"fixed_len", d.fixed_len},
         {"uniform_min", d.uniform_min}};
  if (!d.histogram.empty()) {
    json h = json::array();
    for (const auto& [len, p] : d.histogram) h.push_back(json::array({len, p}));
    j["histogram"] = h;
  }
  return j;
}

LengthDistribution dist_from(const json& j) {
  reject_unknown(j,
                 {"kind", "max_doc_len", "min_len_threshold", "seed", "log_mu",
                  "log_sigma", "upsample_drop_prob", "long_mix_weight",
                  "long_log_mu", "long_log_sigma", "fixed_len", "uniform_min",
                  "histogram"},
                 "distribution");
  LengthDistribution d;
  if (j.contains("kind")) d.kind = dist_kind_from(j.at("kind").get<std::string>());
  get_if(j, "max_doc_len", d.max_doc_len);
  get_if(j, "min_len_threshold", d.min_len_threshold);
  get_if(j, "seed", d.seed);
  get_if(j, "log_mu", d.log_mu);
  get_if(j, "log_sigma", d.log_sigma);
  get_if(j, "upsample_drop_prob", d.upsample_drop_prob);
  get_if(j, "long_mix_weight", d.long_mix_weight);
  get_if(j, "long_log_mu", d.long_log_mu);
  get_if(j, "long_log_sigma", d.long_log_sigma);
  get_if(j, "fixed_len", d.fixed_len);
  get_if(j, "uniform_min", d.uniform_min);
  if (j.contains("histogram")) {
    for (const auto& row : j.at("histogram")) {
      d.histogram.emplace_back(row.at(0).get<Tokens>(), row.at(1).get<double>());
    }
  }
  return d;
}

CommMode comm_mode_from(const std::string& s) {
  if (s == "pingpong") return CommMode::pingpong;
  if (s == "signal") return CommMode::signal;
  if (s == "single_stream") return CommMode::single_stream;
  throw ConfigError("unknown comm_mode: " + s);
}

const char* comm_mode_name(CommMode m) {
  switch (m) {
    case CommMode::pingpong: return "pingpong";
    case CommMode::signal: return "signal";
    case CommMode::single_stream: return "single_stream";
  }
  return "pingpong";
}

ExperimentSpec spec_from(const json& j, const std::filesystem::path& base) {
  reject_unknown(j,
                 {"model", "cluster", "distribution", "strategies", "batches",
                  "epsilon", "e_threshold", "tokens_per_device", "mode",
                  "microbatches", "comm_mode", "backward_ratio", "msg_latency_s",
                  "seed", "sweep", "jobs", "coefficients", "residency_aware"},
                 "experiment spec");
  ExperimentSpec s;
  if (!j.contains("model") || !j.contains("cluster")) {
    throw ConfigError("experiment spec needs model and cluster");
  }
  if (j.at("model").is_string()) {
    s.model = load_model_file((base / j.at("model").get<std::string>()).string());
  } else {
    s.model = model_from(j.at("model"));
  }
  if (j.at("cluster").is_string()) {
    s.cluster =
        load_cluster_file((base / j.at("cluster").get<std::string>()).string());
  } else {
    s.cluster = cluster_from(j.at("cluster"));
  }
  if (j.contains("distribution")) s.distribution = dist_from(j.at("distribution"));
  if (j.contains("strategies")) {
    for (const auto& v : j.at("strategies")) {
      s.strategies.push_back(v.get<std::string>());
    }
  }
  get_if(j, "batches", s.batches);
  get_if(j, "epsilon", s.epsilon);
  get_if(j, "e_threshold", s.e_threshold);
  get_if(j, "tokens_per_device", s.tokens_per_device);
  get_if(j, "mode", s.mode);
  get_if(j, "microbatches", s.microbatches);
  get_if(j, "seed", s.seed);
  get_if(j, "jobs", s.jobs);
  if (j.contains("comm_mode")) {
    s.sim.mode = comm_mode_from(j.at("comm_mode").get<std::string>());
  }
  get_if(j, "backward_ratio", s.sim.backward_ratio);
  get_if(j, "msg_latency_s", s.sim.msg_latency_s);
  if (j.contains("sweep")) {
    const json& sw = j.at("sweep");
    reject_unknown(sw, {"axis", "values"}, "sweep");
    s.sweep.axis = sw.at("axis").get<std::string>();
    for (const auto& v : sw.at("values")) s.sweep.values.push_back(v.get<double>());
  }
  if (j.contains("coefficients")) {
    const json& c = j.at("coefficients");
    reject_unknown(c, {"alpha_ca", "beta_linear", "gamma_mem"}, "coefficients");
    CostCoefficients k;
    get_if(c, "alpha_ca", k.alpha_ca);
    get_if(c, "beta_linear", k.beta_linear);
    get_if(c, "gamma_mem", k.gamma_mem);
    s.coeff_override = k;
  }
  if (j.contains("residency_aware") && j.at("residency_aware").get<bool>()) {
    throw ConfigError("residency_aware byte accounting is reserved, not implemented");
  }
  return s;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

std::string model_to_json(const ModelConfig& m) { return model_json(m).dump(2); }

ModelConfig model_from_json(const std::string& text) {
  return model_from(parse(text));
}

std::string cluster_to_json(const ClusterConfig& c) {
  return cluster_json(c).dump(2);
}

ClusterConfig cluster_from_json(const std::string& text) {
  return cluster_from(parse(text));
}

std::string distribution_to_json(const LengthDistribution& d) {
  return dist_json(d).dump(2);
}

LengthDistribution distribution_from_json(const std::string& text) {
  return dist_from(parse(text));
}

std::string item_to_json(const Item& it) {
  return json{{"doc", it.doc},
              {"q_begin", it.q_begin},
              {"q_end", it.q_end},
              {"kv_extent", it.kv_extent},
              {"ht_mirror", it.ht_mirror},
              {"home_device", it.home_device},
              {"layout", it.layout == Layout::head_tail ? "head_tail"
                                                        : "contiguous"}}
      .dump();
}

Item item_from_json(const std::string& text) {
  const json j = parse(text);
  reject_unknown(j,
                 {"doc", "q_begin", "q_end", "kv_extent", "ht_mirror",
                  "home_device", "layout"},
                 "item");
  Item it;
  get_if(j, "doc", it.doc);
  get_if(j, "q_begin", it.q_begin);
  get_if(j, "q_end", it.q_end);
  get_if(j, "kv_extent", it.kv_extent);
  get_if(j, "ht_mirror", it.ht_mirror);
  get_if(j, "home_device", it.home_device);
  if (j.contains("layout")) {
    const std::string l = j.at("layout").get<std::string>();
    if (l == "head_tail") it.layout = Layout::head_tail;
    else if (l == "contiguous") it.layout = Layout::contiguous;
    else throw ConfigError("unknown layout: " + l);
  }
  return it;
}

std::string spec_to_json(const ExperimentSpec& s) {
  json j{{"model", model_json(s.model)},
         {"cluster", cluster_json(s.cluster)},
         {"distribution", dist_json(s.distribution)},
         {"strategies", s.strategies},
         {"batches", s.batches},
         {"epsilon", s.epsilon},
         {"e_threshold", s.e_threshold},
         {"tokens_per_device", s.tokens_per_device},
         {"mode", s.mode},
         {"microbatches", s.microbatches},
         {"comm_mode", comm_mode_name(s.sim.mode)},
         {"backward_ratio", s.sim.backward_ratio},
         {"msg_latency_s", s.sim.msg_latency_s},
         {"seed", s.seed},
         {"jobs", s.jobs}};
  if (!s.sweep.axis.empty()) {
    j["sweep"] = json{{"axis", s.sweep.axis}, {"values", s.sweep.values}};
  }
  if (s.coeff_override) {
    j["coefficients"] = json{{"alpha_ca", s.coeff_override->alpha_ca},
                             {"beta_linear", s.coeff_override->beta_linear},
                             {"gamma_mem", s.coeff_override->gamma_mem}};
  }
  return j.dump(2);
}

ExperimentSpec spec_from_json(const std::string& text) {
  return spec_from(parse(text), std::filesystem::path("."));
}

ModelConfig load_model_file(const std::string& path) {
  return model_from_json(read_file(path));
}

ClusterConfig load_cluster_file(const std::string& path) {
  return cluster_from_json(read_file(path));
}

ExperimentSpec load_spec_file(const std::string& path) {
  const std::filesystem::path p(path);
  return spec_from(parse(read_file(path)), p.parent_path());
}

}  // namespace cadsim
