#include <algorithm>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <json.hpp>

#include "mcsim/scenario.hpp"

namespace mcsim {

namespace {

using nlohmann::ordered_json;

std::string hex64(std::uint64_t v) {
  std::ostringstream o;
  o << std::hex << std::setw(16) << std::setfill('0') << v;
  return o.str();
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw ConfigError("cannot read " + p.string());
  std::ostringstream o;
  o << in.rdbuf();
  return o.str();
}

void write_manifest(const std::filesystem::path& dir, const ordered_json& m) {
  std::ofstream out(dir / "manifest.json", std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + (dir / "manifest.json").string());
  out << m.dump(2) << '\n';
}

// Keys that must agree for two runs to be comparable.
constexpr const char* kComparableKeys[] = {
    "duration_s",        "inter_site_distance_m", "ring_radius_isd",   "ues_per_cell",
    "num_ues",           "ue_drop_radius_m",      "ue_speed_kmph",     "carrier_freq_ghz",
    "bandwidth_mhz",     "tx_power_dbm",          "pathloss_exponent", "shadowing_std_db",
    "prbs_per_tti",      "ladder_bps",            "segment_duration_s", "audience_script",
};

std::optional<double> number(const std::map<std::string, std::string>& kpis, const std::string& key) {
  auto it = kpis.find(key);
  if (it == kpis.end() || it->second == "undefined") return std::nullopt;
  try {
    return std::stod(it->second);
  } catch (const std::exception&) {
    return std::nullopt;
  }
}

}  // namespace

RunSummary run_scenario(const ScenarioConfig& cfg, const std::filesystem::path& out_dir) {
  cfg.validate();
  std::filesystem::create_directories(out_dir);
  ordered_json manifest;
  manifest["software"] = "mcsim";
  manifest["version"] = kVersion;
  manifest["seed"] = cfg.seed;
  manifest["preset"] = cfg.preset;
  manifest["config"] = ordered_json::parse(config_to_json_text(cfg));
  manifest["status"] = "running";
  write_manifest(out_dir, manifest);

  Scenario s(cfg);
  s.run();
  s.write_outputs(out_dir);

  ordered_json digests = ordered_json::object();
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::recursive_directory_iterator(out_dir)) {
    if (e.is_regular_file() && e.path().filename() != "manifest.json") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  for (const auto& f : files) {
    digests[std::filesystem::relative(f, out_dir).generic_string()] = hex64(fnv1a64(slurp(f)));
  }
  manifest["outputs"] = digests;
  manifest["event_log_digest"] = hex64(s.event_digest());
  manifest["status"] = "complete";
  write_manifest(out_dir, manifest);

  return RunSummary{s.kpis(), out_dir, s.event_digest()};
}

Comparison compare_runs(const std::vector<std::filesystem::path>& dirs) {
  if (dirs.empty()) throw ConfigError("compare needs at least one run directory");
  Comparison c;
  std::vector<ordered_json> configs;
  for (const auto& d : dirs) {
    const auto m = ordered_json::parse(slurp(d / "manifest.json"));
    if (m.value("status", "") != "complete") throw ConfigError(d.string() + ": run did not complete");
    configs.push_back(m.at("config"));
    std::istringstream in(slurp(d / "kpi_report.txt"));
    c.rows.push_back(ComparisonRow{d.string(), m.value("preset", ""), read_kpi_summary(in)});
  }
  for (std::size_t i = 1; i < configs.size(); ++i) {
    for (const char* key : kComparableKeys) {
      if (configs[i].value(key, ordered_json()) != configs[0].value(key, ordered_json())) {
        throw ConfigError("runs differ in '" + std::string(key) + "': " + dirs[0].string() + " vs " +
                          dirs[i].string());
      }
    }
  }

  // Ordering checks over whichever of the three reference deliveries are present.
  const ComparisonRow* ptp = nullptr;
  const ComparisonRow* ptm = nullptr;
  const ComparisonRow* ml = nullptr;
  for (std::size_t i = 0; i < configs.size(); ++i) {
    const std::string d = configs[i].value("delivery", "");
    if (d == "unicast") ptp = &c.rows[i];
    else if (d == "multicast") ptm = &c.rows[i];
    else if (d == "multicast+multilink") ml = &c.rows[i];
  }
  auto lt = [](std::optional<double> a, std::optional<double> b) { return a && b && *a < *b; };
  auto le = [](std::optional<double> a, std::optional<double> b) { return a && b && *a <= *b; };
  const std::string cons = "avg_resource_consumption";
  const std::string se = "al_se_bps_per_hz";
  const std::string frac = "fraction_max_mos";
  if (ptm && ml) {
    c.checks.push_back({"consumption ptm-only < ptm-multilink", lt(number(ptm->kpis, cons), number(ml->kpis, cons))});
    c.checks.push_back({"max-MOS fraction ptm-only < ptm-multilink", lt(number(ptm->kpis, frac), number(ml->kpis, frac))});
  }
  if (ptm && ptp) {
    c.checks.push_back({"consumption ptm-only < ptp-only", lt(number(ptm->kpis, cons), number(ptp->kpis, cons))});
  }
  if (ml && ptp) {
    c.checks.push_back({"consumption ptm-multilink < ptp-only", lt(number(ml->kpis, cons), number(ptp->kpis, cons))});
    const auto a = number(ml->kpis, se);
    const auto b = number(ptp->kpis, se);
    c.checks.push_back({"AL-SE ptm-multilink / ptp-only >= 1.3", a && b && *b > 0 && *a / *b >= 1.3});
    c.checks.push_back({"max-MOS fraction ptm-multilink <= ptp-only", le(number(ml->kpis, frac), number(ptp->kpis, frac))});
  }
  return c;
}

void write_comparison(std::ostream& out, const Comparison& c) {
  const char* keys[] = {"avg_resource_consumption", "al_se_bps_per_hz", "fraction_max_mos", "mean_mos", "quit_count"};
  out << "run,preset";
  for (const char* k : keys) out << ',' << k;
  out << '\n';
  for (const auto& r : c.rows) {
    out << r.dir << ',' << r.preset;
    for (const char* k : keys) {
      auto it = r.kpis.find(k);
      out << ',' << (it == r.kpis.end() ? "undefined" : it->second);
    }
    out << '\n';
  }
  for (const auto& chk : c.checks) out << (chk.passed ? "PASS " : "FAIL ") << chk.description << '\n';
}

}  // namespace mcsim
