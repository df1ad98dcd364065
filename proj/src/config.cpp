#include "mcsim/config.hpp"

#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "json.hpp"

namespace mcsim {

using nlohmann::json;
using nlohmann::ordered_json;

std::string to_string(ContentDelivery d) {
  switch (d) {
    case ContentDelivery::kNone: return "none";
    case ContentDelivery::kUnicast: return "unicast";
    case ContentDelivery::kMulticast: return "multicast";
    case ContentDelivery::kMulticastMultiLink: return "multicast+multilink";
    case ContentDelivery::kMood: return "mood";
    case ContentDelivery::kObjects: return "objects";
  }
  return "unknown";
}

namespace {

ContentDelivery delivery_from_string(const std::string& s) {
  for (auto d : {ContentDelivery::kNone, ContentDelivery::kUnicast, ContentDelivery::kMulticast,
                 ContentDelivery::kMulticastMultiLink, ContentDelivery::kMood, ContentDelivery::kObjects}) {
    if (to_string(d) == s) return d;
  }
  throw ConfigError("delivery: unknown value '" + s +
                    "' (expected none, unicast, multicast, multicast+multilink, mood, objects)");
}

struct Field {
  std::function<void(ScenarioConfig&, const json&)> set;
  std::function<ordered_json(const ScenarioConfig&)> get;
};

template <class T>
Field plain(T ScenarioConfig::*m) {
  return {[m](ScenarioConfig& c, const json& j) { c.*m = j.get<T>(); },
          [m](const ScenarioConfig& c) { return ordered_json(c.*m); }};
}

template <class T>
Field optional(std::optional<T> ScenarioConfig::*m) {
  return {[m](ScenarioConfig& c, const json& j) {
            if (j.is_null()) c.*m = std::nullopt;
            else c.*m = j.get<T>();
          },
          [m](const ScenarioConfig& c) { return (c.*m) ? ordered_json(*(c.*m)) : ordered_json(nullptr); }};
}

const std::vector<std::pair<std::string, Field>>& fields() {
  static const std::vector<std::pair<std::string, Field>> table = [] {
    std::vector<std::pair<std::string, Field>> t;
    auto add = [&](const char* k, Field f) { t.emplace_back(k, std::move(f)); };
    add("preset", plain(&ScenarioConfig::preset));
    add("seed", plain(&ScenarioConfig::seed));
    add("duration_s", plain(&ScenarioConfig::duration_s));
    add("inter_site_distance_m", plain(&ScenarioConfig::inter_site_distance_m));
    add("ring_radius_isd", plain(&ScenarioConfig::ring_radius_isd));
    add("ues_per_cell", plain(&ScenarioConfig::ues_per_cell));
    add("num_ues", optional(&ScenarioConfig::num_ues));
    add("ue_drop_radius_m", optional(&ScenarioConfig::ue_drop_radius_m));
    add("ue_speed_kmph", plain(&ScenarioConfig::ue_speed_kmph));
    add("mobility_step_s", plain(&ScenarioConfig::mobility_step_s));
    add("turn_interval_s", plain(&ScenarioConfig::turn_interval_s));
    add("carrier_freq_ghz", plain(&ScenarioConfig::carrier_freq_ghz));
    add("bandwidth_mhz", plain(&ScenarioConfig::bandwidth_mhz));
    add("tx_power_dbm", plain(&ScenarioConfig::tx_power_dbm));
    add("ue_noise_figure_db", plain(&ScenarioConfig::ue_noise_figure_db));
    add("pathloss_exponent", plain(&ScenarioConfig::pathloss_exponent));
    add("shadowing_std_db", plain(&ScenarioConfig::shadowing_std_db));
    add("shadowing_site_correlation", plain(&ScenarioConfig::shadowing_site_correlation));
    add("ring_mbsfn_useful", plain(&ScenarioConfig::ring_mbsfn_useful));
    add("interference_load_coupling", plain(&ScenarioConfig::interference_load_coupling));
    add("prbs_per_tti", plain(&ScenarioConfig::prbs_per_tti));
    add("data_res_per_prb", plain(&ScenarioConfig::data_res_per_prb));
    add("mcs_table_path", plain(&ScenarioConfig::mcs_table_path));
    add("delivery", Field{[](ScenarioConfig& c, const json& j) { c.delivery = delivery_from_string(j.get<std::string>()); },
                          [](const ScenarioConfig& c) { return ordered_json(to_string(c.delivery)); }});
    add("broadcast_share", plain(&ScenarioConfig::broadcast_share));
    add("multicast_mcs", plain(&ScenarioConfig::multicast_mcs));
    add("ladder_bps", plain(&ScenarioConfig::ladder_bps));
    add("multicast_rung", plain(&ScenarioConfig::multicast_rung));
    add("segment_duration_s", plain(&ScenarioConfig::segment_duration_s));
    add("payload_bytes", plain(&ScenarioConfig::payload_bytes));
    add("mood_activate_threshold", plain(&ScenarioConfig::mood_activate_threshold));
    add("mood_deactivate_threshold", plain(&ScenarioConfig::mood_deactivate_threshold));
    add("mood_evaluation_interval_s", plain(&ScenarioConfig::mood_evaluation_interval_s));
    add("mood_switch_latency_s", plain(&ScenarioConfig::mood_switch_latency_s));
    add("report_interval_s", plain(&ScenarioConfig::report_interval_s));
    add("audience_script", plain(&ScenarioConfig::audience_script));
    add("audience_step_s", plain(&ScenarioConfig::audience_step_s));
    add("ml_threshold_db", plain(&ScenarioConfig::ml_threshold_db));
    add("ml_hysteresis_margin_db", plain(&ScenarioConfig::ml_hysteresis_margin_db));
    add("ml_reorder_window", plain(&ScenarioConfig::ml_reorder_window));
    add("ml_repair_timeout_s", plain(&ScenarioConfig::ml_repair_timeout_s));
    add("ml_repair_backoff_cap_s", plain(&ScenarioConfig::ml_repair_backoff_cap_s));
    add("ml_repair_enabled", plain(&ScenarioConfig::ml_repair_enabled));
    add("initial_buffer_s", plain(&ScenarioConfig::initial_buffer_s));
    add("max_buffer_s", plain(&ScenarioConfig::max_buffer_s));
    add("quit_timer_s", plain(&ScenarioConfig::quit_timer_s));
    add("throughput_ema_alpha", plain(&ScenarioConfig::throughput_ema_alpha));
    add("abr_safety_factor", plain(&ScenarioConfig::abr_safety_factor));
    add("abr_panic_buffer_s", plain(&ScenarioConfig::abr_panic_buffer_s));
    add("cancel_window_s", plain(&ScenarioConfig::cancel_window_s));
    add("request_latency_s", plain(&ScenarioConfig::request_latency_s));
    add("client_tick_s", plain(&ScenarioConfig::client_tick_s));
    add("qoe_window_segments", plain(&ScenarioConfig::qoe_window_segments));
    add("qoe_max_mos_threshold", plain(&ScenarioConfig::qoe_max_mos_threshold));
    add("alert_time_s", optional(&ScenarioConfig::alert_time_s));
    add("alert_size_bytes", plain(&ScenarioConfig::alert_size_bytes));
    add("alert_rounds", plain(&ScenarioConfig::alert_rounds));
    add("alert_mcs", plain(&ScenarioConfig::alert_mcs));
    add("alert_bitrate_bps", plain(&ScenarioConfig::alert_bitrate_bps));
    add("non_capable_ues", plain(&ScenarioConfig::non_capable_ues));
    add("edge_ues", plain(&ScenarioConfig::edge_ues));
    add("objects",
        Field{[](ScenarioConfig& c, const json& j) {
                c.objects.clear();
                for (const auto& o : j) {
                  for (const auto& [k, v] : o.items()) {
                    if (k != "name" && k != "bitrate_bps" && k != "personalized") {
                      throw ConfigError("objects: unknown key '" + k + "'");
                    }
                  }
                  c.objects.push_back(ObjectSpec{o.at("name").get<std::string>(), o.at("bitrate_bps").get<double>(),
                                                 o.value("personalized", false)});
                }
              },
              [](const ScenarioConfig& c) {
                ordered_json a = ordered_json::array();
                for (const auto& o : c.objects) {
                  a.push_back({{"name", o.name}, {"bitrate_bps", o.bitrate_bps}, {"personalized", o.personalized}});
                }
                return a;
              }});
    add("object_heavy_threshold_bps", plain(&ScenarioConfig::object_heavy_threshold_bps));
    add("outage_script",
        Field{[](ScenarioConfig& c, const json& j) {
                c.outage_script.clear();
                for (const auto& o : j) {
                  for (const auto& [k, v] : o.items()) {
                    if (k != "ue" && k != "start_s" && k != "end_s") throw ConfigError("outage_script: unknown key '" + k + "'");
                  }
                  c.outage_script.push_back(OutageWindow{o.at("ue").get<int>(), o.at("start_s").get<double>(),
                                                         o.at("end_s").get<double>()});
                }
              },
              [](const ScenarioConfig& c) {
                ordered_json a = ordered_json::array();
                for (const auto& o : c.outage_script) a.push_back({{"ue", o.ue}, {"start_s", o.start_s}, {"end_s", o.end_s}});
                return a;
              }});
    add("scripted_losses",
        Field{[](ScenarioConfig& c, const json& j) {
                c.scripted_losses.clear();
                for (const auto& o : j) {
                  for (const auto& [k, v] : o.items()) {
                    if (k != "ue" && k != "seq") throw ConfigError("scripted_losses: unknown key '" + k + "'");
                  }
                  c.scripted_losses.push_back(ScriptedLoss{o.at("ue").get<int>(), o.at("seq").get<std::uint64_t>()});
                }
              },
              [](const ScenarioConfig& c) {
                ordered_json a = ordered_json::array();
                for (const auto& o : c.scripted_losses) a.push_back({{"ue", o.ue}, {"seq", o.seq}});
                return a;
              }});
    add("write_event_log", plain(&ScenarioConfig::write_event_log));
    return t;
  }();
  return table;
}

const Field* find_field(const std::string& key) {
  for (const auto& [k, f] : fields()) {
    if (k == key) return &f;
  }
  return nullptr;
}

}  // namespace

RadioParams ScenarioConfig::radio_params() const {
  RadioParams p;
  p.carrier_freq_ghz = carrier_freq_ghz;
  p.bandwidth_mhz = bandwidth_mhz;
  p.tx_power_dbm = tx_power_dbm;
  p.ue_noise_figure_db = ue_noise_figure_db;
  p.pathloss_exponent = pathloss_exponent;
  p.shadowing_std_db = shadowing_std_db;
  p.shadowing_site_correlation = shadowing_site_correlation;
  p.ring_mbsfn_useful = ring_mbsfn_useful;
  return p;
}

SchedulerConfig ScenarioConfig::scheduler_config() const {
  SchedulerConfig s;
  s.num_cells = 3;
  s.prbs_per_tti = prbs_per_tti;
  s.broadcast_share = broadcast_share;
  return s;
}

MoodConfig ScenarioConfig::mood_config() const {
  MoodConfig m;
  m.activate_threshold = mood_activate_threshold;
  m.deactivate_threshold = mood_deactivate_threshold;
  m.evaluation_interval = SimTime::from_seconds(mood_evaluation_interval_s);
  m.switch_latency = SimTime::from_seconds(mood_switch_latency_s);
  return m;
}

MlConfig ScenarioConfig::ml_config() const {
  MlConfig m;
  m.sinr_threshold_db = ml_threshold_db;
  m.hysteresis_margin_db = ml_hysteresis_margin_db;
  m.reorder_window = ml_reorder_window;
  m.repair_timeout = SimTime::from_seconds(ml_repair_timeout_s);
  m.repair_backoff_cap = SimTime::from_seconds(ml_repair_backoff_cap_s);
  m.repair_enabled = ml_repair_enabled;
  return m;
}

ClientConfig ScenarioConfig::client_config() const {
  ClientConfig c;
  c.initial_buffer_target_s = initial_buffer_s;
  c.max_buffer_s = max_buffer_s;
  c.quit_timer_s = quit_timer_s;
  c.throughput_ema_alpha = throughput_ema_alpha;
  c.safety_factor = abr_safety_factor;
  c.panic_buffer_s = abr_panic_buffer_s;
  c.cancel_window_s = cancel_window_s;
  c.request_latency = SimTime::from_seconds(request_latency_s);
  return c;
}

QoeConfig ScenarioConfig::qoe_config() const {
  QoeConfig q;
  q.window_segments = qoe_window_segments;
  q.max_mos_threshold = qoe_max_mos_threshold;
  return q;
}

Ladder ScenarioConfig::ladder() const {
  Ladder l;
  for (double b : ladder_bps) {
    std::ostringstream label;
    label << b / 1e6 << "Mbps";
    l.push_back(Rung{b, label.str()});
  }
  return l;
}

void ScenarioConfig::validate() const {
  std::vector<std::string> errs;
  auto check = [&](bool ok, const std::string& msg) {
    if (!ok) errs.push_back(msg);
  };
  auto positive = [&](double v, const char* name) { check(std::isfinite(v) && v > 0, std::string(name) + " must be positive"); };

  positive(duration_s, "duration_s");
  positive(inter_site_distance_m, "inter_site_distance_m");
  check(ring_radius_isd >= 1.0, "ring_radius_isd must be >= 1");
  check(ues_per_cell >= 0, "ues_per_cell must be >= 0");
  check(total_ues() >= 1, "num_ues must be >= 1");
  if (ue_drop_radius_m) positive(*ue_drop_radius_m, "ue_drop_radius_m");
  check(ue_speed_kmph >= 0, "ue_speed_kmph must be >= 0");
  positive(mobility_step_s, "mobility_step_s");
  positive(turn_interval_s, "turn_interval_s");
  positive(carrier_freq_ghz, "carrier_freq_ghz");
  positive(bandwidth_mhz, "bandwidth_mhz");
  check(shadowing_std_db >= 0, "shadowing_std_db must be >= 0");
  check(shadowing_site_correlation >= 0 && shadowing_site_correlation <= 1, "shadowing_site_correlation must be in [0, 1]");
  check(prbs_per_tti >= 1, "prbs_per_tti must be >= 1");
  positive(data_res_per_prb, "data_res_per_prb");
  check(broadcast_share >= 0 && broadcast_share <= 1, "broadcast_share must be in [0, 1]");
  check(multicast_mcs >= 0 && multicast_mcs <= 28, "multicast_mcs must be in [0, 28]");
  check(alert_mcs >= 0 && alert_mcs <= 28, "alert_mcs must be in [0, 28]");
  check(!ladder_bps.empty(), "ladder_bps must not be empty");
  for (std::size_t i = 0; i < ladder_bps.size(); ++i) {
    check(ladder_bps[i] > 0, "ladder_bps[" + std::to_string(i) + "] must be positive");
    if (i > 0) check(ladder_bps[i] > ladder_bps[i - 1], "ladder_bps must be strictly increasing");
  }
  check(multicast_rung >= 0 && multicast_rung < static_cast<int>(ladder_bps.size()),
        "multicast_rung must index ladder_bps");
  positive(segment_duration_s, "segment_duration_s");
  check(payload_bytes >= 1 && payload_bytes <= 65535, "payload_bytes must be in [1, 65535]");
  positive(report_interval_s, "report_interval_s");
  positive(audience_step_s, "audience_step_s");
  for (int a : audience_script) {
    check(a >= 0 && a <= total_ues(), "audience_script entries must be in [0, num_ues]");
  }
  positive(client_tick_s, "client_tick_s");
  check(std::abs(SimTime::from_seconds(client_tick_s).seconds() - client_tick_s) < 1e-9 &&
            client_tick_s >= 0.001,
        "client_tick_s must be a whole number of milliseconds");
  check(alert_size_bytes >= 1, "alert_size_bytes must be >= 1");
  check(alert_rounds >= 1, "alert_rounds must be >= 1");
  positive(alert_bitrate_bps, "alert_bitrate_bps");
  check(non_capable_ues >= 0 && edge_ues >= 0 && non_capable_ues + edge_ues <= total_ues(),
        "non_capable_ues + edge_ues must fit in num_ues");
  if (alert_time_s) check(*alert_time_s >= 0 && *alert_time_s < duration_s, "alert_time_s must lie in [0, duration_s)");
  if (delivery == ContentDelivery::kObjects) {
    check(!objects.empty(), "objects must not be empty for delivery=objects");
  }
  for (const auto& o : objects) check(o.bitrate_bps > 0, "objects: bitrate_bps must be positive");
  for (const auto& o : outage_script) {
    check(o.ue >= 0 && o.ue < total_ues(), "outage_script: ue out of range");
    check(o.end_s > o.start_s, "outage_script: end_s must exceed start_s");
  }
  for (const auto& l : scripted_losses) check(l.ue >= 0 && l.ue < total_ues(), "scripted_losses: ue out of range");

  auto nested = [&](auto&& fn) {
    try {
      fn();
    } catch (const std::exception& e) {
      errs.emplace_back(e.what());
    }
  };
  nested([&] { mood_config().validate(); });
  nested([&] { ml_config().validate(); });
  nested([&] { client_config().validate(); });
  nested([&] { qoe_config().validate(); });

  if (!errs.empty()) {
    std::string msg = "invalid config:";
    for (const auto& e : errs) msg += "\n  " + e;
    throw ConfigError(msg);
  }
}

std::vector<std::string> preset_names() {
  return {"ptp-only", "ptm-only", "ptm-multilink", "mood-demo", "pw-alert", "object-based"};
}

std::string preset_description(const std::string& name) {
  if (name == "ptp-only") return "every UE streams its own unicast DASH session";
  if (name == "ptm-only") return "one multicast stream at MCS 2, no unicast help";
  if (name == "ptm-multilink") return "multicast at MCS 4 with unicast duplication below 5 dB";
  if (name == "mood-demo") return "scripted audience 1,2,3,1 driving unicast/multicast switching";
  if (name == "pw-alert") return "multimedia alert carousel, 3 non-capable UEs and 1 edge UE";
  if (name == "object-based") return "shared video over multicast, light and personal objects over unicast";
  throw ConfigError("unknown preset '" + name + "'");
}

ScenarioConfig preset(const std::string& name) {
  ScenarioConfig c;
  c.preset = name;
  if (name == "ptp-only") {
    c.delivery = ContentDelivery::kUnicast;
  } else if (name == "ptm-only") {
    c.delivery = ContentDelivery::kMulticast;
    c.multicast_mcs = 2;
  } else if (name == "ptm-multilink") {
    c.delivery = ContentDelivery::kMulticastMultiLink;
    c.multicast_mcs = 4;
  } else if (name == "mood-demo") {
    c.delivery = ContentDelivery::kMood;
    c.multicast_mcs = 2;
    c.num_ues = 3;
    c.audience_script = {1, 2, 3, 1};
    c.audience_step_s = 30.0;
    c.duration_s = 120.0;
  } else if (name == "pw-alert") {
    c.delivery = ContentDelivery::kNone;
    c.duration_s = 60.0;
    c.alert_time_s = 5.0;
    c.non_capable_ues = 3;
    c.edge_ues = 1;
    c.ue_speed_kmph = 0.0;
  } else if (name == "object-based") {
    c.delivery = ContentDelivery::kObjects;
    c.multicast_mcs = 2;
    c.duration_s = 120.0;
    c.objects = {{"video", 8e6, false}, {"audio", 256e3, false}, {"captions", 16e3, false},
                 {"overlay", 50e3, true}};
  } else {
    throw ConfigError("unknown preset '" + name + "' (run `mcsim presets` for the list)");
  }
  return c;
}

ScenarioConfig config_from_json_text(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  if (!doc.is_object()) throw ConfigError("config must be a JSON object");
  ScenarioConfig cfg = preset(doc.value("preset", std::string("ptp-only")));
  std::vector<std::string> errs;
  for (const auto& [key, value] : doc.items()) {
    const Field* f = find_field(key);
    if (f == nullptr) {
      errs.push_back("unknown key '" + key + "'");
      continue;
    }
    try {
      f->set(cfg, value);
    } catch (const json::exception& e) {
      errs.push_back(key + ": " + e.what());
    } catch (const ConfigError& e) {
      errs.push_back(key + ": " + e.what());
    }
  }
  if (!errs.empty()) {
    std::string msg = "invalid config:";
    for (const auto& e : errs) msg += "\n  " + e;
    throw ConfigError(msg);
  }
  cfg.validate();
  return cfg;
}

ScenarioConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return config_from_json_text(buf.str());
}

std::string config_to_json_text(const ScenarioConfig& cfg) {
  ordered_json j = ordered_json::object();
  for (const auto& [k, f] : fields()) j[k] = f.get(cfg);
  return j.dump(2);
}

}  // namespace mcsim
