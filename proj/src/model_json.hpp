#pragma once
// JSON (de)serialization for model configuration, shared by the config loader
// and the checkpoint manifest. Private to the library sources so nlohmann
// stays out of the public headers. Readers collect errors instead of throwing
// on the first problem so a bad file reports everything at once.

#include <json.hpp>

#include <string>
#include <vector>

#include "gca/model.hpp"

namespace gca {

using ordered_json = nlohmann::ordered_json;

inline const char* attention_kind_name(AttentionKind k) {
  switch (k) {
    case AttentionKind::None: return "none";
    case AttentionKind::Gca: return "gca";
    case AttentionKind::Se: return "se";
    case AttentionKind::Cbam: return "cbam";
    case AttentionKind::CoordAtt: return "coordatt";
  }
  return "none";
}

inline bool attention_kind_from(const std::string& s, AttentionKind& out) {
  if (s == "none") out = AttentionKind::None;
  else if (s == "gca") out = AttentionKind::Gca;
  else if (s == "se") out = AttentionKind::Se;
  else if (s == "cbam") out = AttentionKind::Cbam;
  else if (s == "coordatt") out = AttentionKind::CoordAtt;
  else return false;
  return true;
}

inline const char* pool_kind_name(PoolKind k) {
  switch (k) {
    case PoolKind::Avg: return "avg";
    case PoolKind::Max: return "max";
    case PoolKind::AvgMax: return "avgmax";
  }
  return "avgmax";
}

inline bool pool_kind_from(const std::string& s, PoolKind& out) {
  if (s == "avg") out = PoolKind::Avg;
  else if (s == "max") out = PoolKind::Max;
  else if (s == "avgmax") out = PoolKind::AvgMax;
  else return false;
  return true;
}

inline ordered_json model_config_to_json(const ModelConfig& cfg) {
  ordered_json j;
  j["in_channels"] = cfg.in_channels;
  j["num_classes"] = cfg.num_classes;
  j["width_scale"] = cfg.width_scale;
  j["attention"] = {{"kind", attention_kind_name(cfg.attention.kind)},
                    {"groups", cfg.attention.groups},
                    {"reduction", cfg.attention.reduction},
                    {"pooling", pool_kind_name(cfg.attention.pooling)},
                    {"share_across_groups", cfg.attention.share_across_groups},
                    {"min_mid", cfg.attention.min_mid}};
  j["stage_attention"] = cfg.stage_attention;
  j["bn_eps"] = cfg.bn_eps;
  j["bn_momentum"] = cfg.bn_momentum;
  return j;
}

// Helpers for strict readers: every recognized key is consumed, anything left
// over is reported as unknown.

template <typename T>
void read_field(ordered_json& j, const char* key, T& out, const std::string& where,
                std::vector<std::string>& errors) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const ordered_json::exception&) {
    errors.push_back(where + "." + key + ": wrong type");
  }
  j.erase(key);
}

inline void report_unknown(const ordered_json& j, const std::string& where,
                           std::vector<std::string>& errors) {
  for (const auto& item : j.items()) errors.push_back(where + "." + item.key() + ": unknown key");
}

inline void model_config_from_json(ordered_json j, ModelConfig& cfg, const std::string& where,
                                   std::vector<std::string>& errors) {
  if (!j.is_object()) {
    errors.push_back(where + ": must be an object");
    return;
  }
  read_field(j, "in_channels", cfg.in_channels, where, errors);
  read_field(j, "num_classes", cfg.num_classes, where, errors);
  read_field(j, "width_scale", cfg.width_scale, where, errors);
  if (j.contains("attention")) {
    ordered_json a = j["attention"];
    j.erase("attention");
    if (!a.is_object()) {
      errors.push_back(where + ".attention: must be an object");
    } else {
      std::string kind, pooling;
      read_field(a, "kind", kind, where + ".attention", errors);
      if (!kind.empty() && !attention_kind_from(kind, cfg.attention.kind))
        errors.push_back(where + ".attention.kind: unknown value '" + kind + "'");
      read_field(a, "groups", cfg.attention.groups, where + ".attention", errors);
      read_field(a, "reduction", cfg.attention.reduction, where + ".attention", errors);
      read_field(a, "pooling", pooling, where + ".attention", errors);
      if (!pooling.empty() && !pool_kind_from(pooling, cfg.attention.pooling))
        errors.push_back(where + ".attention.pooling: unknown value '" + pooling + "'");
      read_field(a, "share_across_groups", cfg.attention.share_across_groups,
                 where + ".attention", errors);
      read_field(a, "min_mid", cfg.attention.min_mid, where + ".attention", errors);
      report_unknown(a, where + ".attention", errors);
    }
  }
  read_field(j, "stage_attention", cfg.stage_attention, where, errors);
  read_field(j, "bn_eps", cfg.bn_eps, where, errors);
  read_field(j, "bn_momentum", cfg.bn_momentum, where, errors);
  report_unknown(j, where, errors);
}

}  // namespace gca
