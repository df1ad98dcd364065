#include "mcsim/scenario.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numbers>
#include <set>
#include <sstream>

namespace mcsim {

namespace {

constexpr std::int64_t kOpenEnd = std::numeric_limits<std::int64_t>::max();
constexpr SessionId kAlertSession = 1;

}  // namespace

std::string AlertOutcome::path() const {
  if (!completed_at) return "unreached";
  if (!capable) return "unicast";
  return unicast_packets > 0 ? "multicast+unicast-repair" : "multicast";
}

void write_alert_csv(std::ostream& out, const std::vector<AlertOutcome>& outcomes) {
  out << "ue,capable,edge,completed_at,path\n";
  for (const auto& o : outcomes) {
    out << o.ue << ',' << (o.capable ? 1 : 0) << ',' << (o.edge ? 1 : 0) << ',';
    if (o.completed_at) out << std::fixed << std::setprecision(3) << o.completed_at->seconds();
    else out << "undefined";
    out << ',' << o.path() << '\n';
  }
}

struct Scenario::Impl {
  // Reception state of one UE for one multicast session.
  struct McRx {
    SessionId session = 0;
    std::int64_t from = 0;
    std::int64_t until = kOpenEnd;
    MergeBuffer merge;
    std::map<std::int64_t, std::uint64_t> assembly;
    bool flushed = false;
  };

  struct McSession {
    std::unique_ptr<Session> session;
    int bearer = -1;
    int object = -1;  // -1: main content
    std::int64_t from = 0;
    std::int64_t until = kOpenEnd;
  };

  struct UcRoute {
    UeId ue = 0;
    int object = -1;
  };

  struct UeCtx {
    bool watching = false;
    bool ever_watched = false;
    std::unique_ptr<Client> client;
    std::vector<PlaybackRecord> past_records;
    std::vector<TraceRow> past_trace;
    std::vector<StallEpisode> past_episodes;
    bool quit_archived = false;
    std::unique_ptr<Session> uc_session;
    std::map<SessionId, McRx> rx;
    std::vector<std::unique_ptr<Session>> obj_sessions;  // per object, unicast ones only
    std::unique_ptr<ObjectComposer> composer;
    std::map<std::pair<SessionId, std::int64_t>, std::int64_t> obj_bytes;
    MergeStats retired_merge;
    double source_bits = 0.0;
    std::int64_t bits_after_quit = 0;
    std::int64_t reports_after_quit = 0;
    std::int64_t unicast_bits = 0;
    std::int64_t repair_requests = 0;
    std::int64_t repair_packets = 0;
    SimTime next_report;
    bool capable = true;
    bool edge = false;
    std::vector<OutageWindow> outages;
  };

  ScenarioConfig cfg;
  Simulator sim;
  RngStream place_rng;
  RngStream channel_rng;
  RngStream mobility_rng;
  RadioModel radio;
  LinkAdaptation link;
  DeliveryCore core;
  Ladder ladder;
  ClientConfig client_cfg;
  MlConfig ml_cfg;
  QoeConfig qoe_cfg;
  int n = 0;
  double seg_dur = 1.0;
  SimTime horizon;
  SimTime client_dt;
  std::int64_t num_segments = 0;
  std::vector<int> cell_index;  // cell id -> scheduler cell, -1 if not simulated

  std::vector<UeRadio> ue_radio;
  std::vector<UnicastPowers> ue_powers;  // refreshed with mobility
  std::vector<double> cell_load;         // per simulated cell, previous TTI
  std::vector<UeCtx> ues;
  std::vector<UeLinkView> views;

  std::map<SessionId, McSession> mc_sessions;
  std::map<SessionId, UcRoute> uc_routes;
  SessionId next_session_id = 10;
  SessionId main_mc = -1;  // current main-content multicast session
  std::optional<MlGateway> gw;
  std::optional<MoodController> mood;
  std::int64_t next_segment = 0;
  std::int64_t live_edge = -1;

  // Objects.
  std::vector<DeliveryMode> object_modes;
  std::vector<SessionId> object_mc;  // per object, multicast session or -1

  // Alert.
  std::optional<AlertCarousel> carousel;
  int alert_bearer = -1;
  bool alert_repair_done = false;
  std::vector<AlertOutcome> alert;

  std::set<std::pair<UeId, std::uint64_t>> scripted_losses;
  std::vector<std::string> warnings;
  std::ostringstream event_log;
  bool ran_to_end = false;

  explicit Impl(ScenarioConfig c)
      : cfg(std::move(c)),
        place_rng(cfg.seed, "placement"),
        channel_rng(cfg.seed, "channel"),
        mobility_rng(cfg.seed, "mobility"),
        radio(cfg.radio_params(), make_topology(cfg)),
        link(cfg.mcs_table_path.empty() ? McsTable::standard() : McsTable::load(cfg.mcs_table_path),
             cfg.data_res_per_prb),
        core(cfg.scheduler_config(), link, cfg.total_ues()),
        ladder(cfg.ladder()),
        client_cfg(cfg.client_config()),
        ml_cfg(cfg.ml_config()),
        qoe_cfg(cfg.qoe_config()) {
    n = cfg.total_ues();
    seg_dur = cfg.segment_duration_s;
    horizon = SimTime::from_seconds(cfg.duration_s);
    client_dt = SimTime::from_seconds(cfg.client_tick_s);
    num_segments = static_cast<std::int64_t>(std::ceil(cfg.duration_s / seg_dur - 1e-9));
    if (cfg.write_event_log) sim.set_log_sink(&event_log);

    cell_index.assign(radio.topology().cells.size(), -1);
    const auto sim_ids = radio.topology().simulated_ids();
    for (std::size_t i = 0; i < sim_ids.size(); ++i) cell_index[sim_ids[i]] = static_cast<int>(i);

    place_ues();
    refresh_powers();
    cell_load.assign(sim_ids.size(), 1.0);
    for (const auto& l : cfg.scripted_losses) scripted_losses.emplace(l.ue, l.seq);
    for (const auto& o : cfg.outage_script) ues[o.ue].outages.push_back(o);
    views.resize(static_cast<std::size_t>(n));
    if (cfg.delivery == ContentDelivery::kMulticastMultiLink) gw.emplace(ml_cfg, n);
    if (cfg.delivery == ContentDelivery::kMood) mood.emplace(cfg.mood_config(), 0, MoodMode::kUnicast);
    schedule_all();
  }

  static Topology make_topology(const ScenarioConfig& c) {
    Topology t = Topology::three_cell_cluster(c.inter_site_distance_m, c.ring_radius_isd);
    if (c.ue_drop_radius_m) t.region_radius_m = *c.ue_drop_radius_m;
    return t;
  }

  // ---- setup ---------------------------------------------------------------

  void place_ues() {
    ue_radio.reserve(static_cast<std::size_t>(n));
    ues.resize(static_cast<std::size_t>(n));
    const double speed = kmph_to_mps(cfg.ue_speed_kmph);
    const double radius = radio.topology().region_radius_m;
    const int first_edge = n - cfg.edge_ues;
    RngStream edge_rng(cfg.seed, "edge-placement");
    // With a per-cell density each simulated cell gets the same number of
    // UEs attached at drop time (UE i goes to cell i mod 3).
    const auto sim_ids = radio.topology().simulated_ids();
    const bool per_cell = !cfg.num_ues.has_value();
    for (int i = 0; i < n; ++i) {
      const double heading = place_rng.uniform(-std::numbers::pi, std::numbers::pi);
      UeRadio ue;
      for (int attempt = 0; attempt <= 100000; ++attempt) {
        if (attempt == 100000) throw std::runtime_error("cannot place a UE in the simulated cells");
        ue = radio.make_ue(radio.uniform_position(place_rng, radius), heading, speed, channel_rng);
        if (!radio.in_coverage(ue)) continue;
        if (!per_cell || ue.serving_cell == sim_ids[i % sim_ids.size()]) break;
      }
      ues[i].capable = i >= cfg.non_capable_ues;
      if (i >= first_edge) {
        ues[i].edge = true;
        ue = find_edge_position(edge_rng, heading, speed, radius);
      }
      ue_radio.push_back(std::move(ue));
    }
  }

  // A spot where the alert multicast cannot be decoded but unicast works.
  UeRadio find_edge_position(RngStream& rng, double heading, double speed, double radius) {
    const double limit = link.table().at(cfg.alert_mcs).min_sinr_db - 1.0;
    const double floor = link.table().entries().front().min_sinr_db;
    for (int attempt = 0; attempt < 200000; ++attempt) {
      const Vec2 pos = radio.uniform_position(rng, radius);
      UeRadio ue = radio.make_ue(pos, heading, speed, rng);
      if (ue.sinr_mbsfn_db < limit && ue.sinr_unicast_db >= floor) return ue;
    }
    warnings.push_back("no multicast-edge position found; edge UE placed uniformly");
    return radio.make_ue(radio.uniform_position(rng, radius), heading, speed, rng);
  }

  void schedule_all() {
    // Sessions and audience exist before segment 0 is published at t = 0;
    // segment k follows at k * segment duration.
    sim.schedule(SimTime(0), EventKind::kAudienceChange, [this] { on_start(); });
    sim.schedule(SimTime(0), EventKind::kSegmentEnqueue, [this] { on_publish(); });
    sim.schedule(SimTime(0), EventKind::kSchedulerTick, [this] { on_tti(); });
    sim.schedule(client_dt, EventKind::kClientTick, [this] { on_client_tick(); });
    const SimTime mob = SimTime::from_seconds(cfg.mobility_step_s);
    sim.schedule(mob, EventKind::kMobilityStep, [this, mob] { on_mobility(mob); });
    if (mood) {
      const SimTime every = mood->config().evaluation_interval;
      sim.schedule(every, EventKind::kMoodEvaluate, [this, every] { on_mood_evaluate(every); });
    }
    if (cfg.alert_time_s) {
      sim.schedule(SimTime::from_seconds(*cfg.alert_time_s), EventKind::kAlertTrigger, [this] { on_alert(); });
    }
  }

  void refresh_powers() {
    ue_powers.resize(ue_radio.size());
    for (std::size_t i = 0; i < ue_radio.size(); ++i) ue_powers[i] = radio.unicast_powers(ue_radio[i]);
  }

  double unicast_sinr(UeId ue) const {
    if (!cfg.interference_load_coupling) return ue_radio[ue].sinr_unicast_db;
    return load_weighted_sinr_db(ue_powers[ue], cell_index.at(ue_radio[ue].serving_cell), cell_load);
  }

  void update_cell_load() {
    const auto logs = core.logs();
    for (std::size_t c = 0; c < logs.size(); ++c) {
      if (logs[c].empty()) continue;
      const ResourceRow& r = logs[c].rows().back();
      const int avail = r.prbs_total - r.prbs_multicast;
      cell_load[c] = avail > 0 ? static_cast<double>(r.prbs_unicast) / avail : 0.0;
    }
  }

  bool in_outage(UeId ue, SimTime now) const {
    for (const auto& o : ues[ue].outages) {
      if (now >= SimTime::from_seconds(o.start_s) && now < SimTime::from_seconds(o.end_s)) return true;
    }
    return false;
  }

  bool active(UeId ue) const {
    const UeCtx& u = ues[ue];
    return !(u.client && u.client->quit());
  }

  // ---- audience --------------------------------------------------------------

  int scripted_audience(SimTime now) const {
    if (cfg.audience_script.empty()) return n;
    const auto step = static_cast<std::size_t>(now.seconds() / cfg.audience_step_s + 1e-9);
    return cfg.audience_script[std::min(step, cfg.audience_script.size() - 1)];
  }

  void on_start() {
    switch (cfg.delivery) {
      case ContentDelivery::kMulticast:
      case ContentDelivery::kMulticastMultiLink:
        open_main_multicast(0);
        break;
      case ContentDelivery::kObjects:
        setup_objects();
        break;
      default:
        break;
    }
    apply_audience();
    if (!cfg.audience_script.empty()) {
      const SimTime step = SimTime::from_seconds(cfg.audience_step_s);
      for (SimTime t = step; t < horizon; t += step) {
        sim.schedule(t, EventKind::kAudienceChange, [this] { apply_audience(); });
      }
    }
    if (gw) {
      for (UeId ue = 0; ue < n; ++ue) {
        if (ues[ue].watching) gw->update(ue, effective_mbsfn(ue));
      }
    }
  }

  void apply_audience() {
    if (cfg.delivery == ContentDelivery::kNone) return;
    const int want = scripted_audience(sim.now());
    for (UeId ue = 0; ue < n; ++ue) {
      const bool should = ue < want;
      if (should && !ues[ue].watching && !ues[ue].quit_archived) join(ue);  // quitting is final
      else if (!should && ues[ue].watching) leave(ue);
    }
  }

  bool main_multicast_live() const {
    return main_mc >= 0 && mc_sessions.at(main_mc).until == kOpenEnd;
  }

  void join(UeId ue) {
    UeCtx& u = ues[ue];
    if (u.client) archive_client(ue);
    u.watching = true;
    u.ever_watched = true;
    u.next_report = sim.now();
    if (cfg.delivery == ContentDelivery::kObjects) {
      Ladder total{{0.0, "objects"}};
      for (const auto& o : cfg.objects) total[0].bits_per_s += o.bitrate_bps;
      const std::int64_t first = next_segment;
      u.client = std::make_unique<Client>(ue, client_cfg, total, seg_dur, first);
      u.composer = std::make_unique<ObjectComposer>(static_cast<int>(cfg.objects.size()));
      u.obj_sessions.clear();
      for (std::size_t i = 0; i < cfg.objects.size(); ++i) {
        if (object_modes[i] == DeliveryMode::kMulticast) {
          add_rx(ue, object_mc[i], first);
          u.obj_sessions.push_back(nullptr);
        } else {
          const SessionId id = next_session_id++;
          u.obj_sessions.push_back(std::make_unique<Session>(id, static_cast<int>(i), DeliveryMode::kUnicast,
                                                             Ladder{{cfg.objects[i].bitrate_bps, cfg.objects[i].name}},
                                                             seg_dur, static_cast<std::uint32_t>(cfg.payload_bytes)));
          uc_routes[id] = UcRoute{ue, static_cast<int>(i)};
        }
      }
      return;
    }
    if (main_multicast_live()) {
      const std::int64_t first = next_segment;
      u.client = std::make_unique<Client>(ue, client_cfg, ladder, seg_dur, first);
      add_rx(ue, main_mc, first);
      if (gw) gw->update(ue, effective_mbsfn(ue));
    } else {
      const std::int64_t first = std::max<std::int64_t>(live_edge, 0);
      u.client = std::make_unique<Client>(ue, client_cfg, ladder, seg_dur, first);
      u.client->start_unicast(first, std::nullopt, std::nullopt);
    }
  }

  void leave(UeId ue) {
    UeCtx& u = ues[ue];
    u.watching = false;
    core.purge_unicast(ue, [](const Packet&) { return true; });
    if (gw) gw->set_duplication(ue, false);
    for (auto& [sid, rx] : u.rx) retire_merge(u, rx);
    u.rx.clear();
    if (u.client) archive_client(ue);
  }

  void retire_merge(UeCtx& u, const McRx& rx) {
    const MergeStats& s = rx.merge.stats();
    u.retired_merge.received += s.received;
    u.retired_merge.duplicates_discarded += s.duplicates_discarded;
    u.retired_merge.repaired += s.repaired;
    u.retired_merge.declared_lost += s.declared_lost;
    u.retired_merge.stale_dropped += s.stale_dropped;
  }

  void archive_client(UeId ue) {
    UeCtx& u = ues[ue];
    if (!u.client || u.quit_archived) return;
    u.client->playback().close(sim.now());
    const auto& recs = u.client->playback().records();
    u.past_records.insert(u.past_records.end(), recs.begin(), recs.end());
    const auto& tr = u.client->trace();
    u.past_trace.insert(u.past_trace.end(), tr.begin(), tr.end());
    const auto& eps = u.client->playback().episodes();
    u.past_episodes.insert(u.past_episodes.end(), eps.begin(), eps.end());
    if (u.client->quit()) u.quit_archived = true;
    else u.client.reset();
  }

  void add_rx(UeId ue, SessionId sid, std::int64_t from) {
    const McSession& ms = mc_sessions.at(sid);
    const SegmentSpan* span = ms.session->find_segment(from);
    const std::uint64_t start = span ? span->first_seq : ms.session->next_seq();
    ues[ue].rx.insert_or_assign(sid, McRx{sid, from, kOpenEnd, MergeBuffer(ml_cfg, start), {}, false});
  }

  // ---- multicast sessions ---------------------------------------------------

  SessionId open_multicast(int object, double bitrate, int rung, std::int64_t from) {
    const SessionId id = next_session_id++;
    Ladder l = object < 0 ? ladder : Ladder{{bitrate, cfg.objects[object].name}};
    McSession ms;
    ms.session = std::make_unique<Session>(id, object < 0 ? 0 : object,
                                           gw ? DeliveryMode::kMulticastWithMultiLink : DeliveryMode::kMulticast,
                                           l, seg_dur, static_cast<std::uint32_t>(cfg.payload_bytes));
    ms.bearer = core.open_bearer(id, cfg.multicast_mcs, object < 0 ? ladder.at(rung).bits_per_s : bitrate);
    ms.object = object;
    ms.from = from;
    mc_sessions.emplace(id, std::move(ms));
    return id;
  }

  void open_main_multicast(std::int64_t from) {
    main_mc = open_multicast(-1, 0.0, cfg.multicast_rung, from);
  }

  void setup_objects() {
    ObjectSet set;
    for (std::size_t i = 0; i < cfg.objects.size(); ++i) {
      set.objects.push_back(MediaObject{static_cast<int>(i), cfg.objects[i].name, cfg.objects[i].bitrate_bps,
                                        cfg.objects[i].personalized ? Popularity::kPersonalized : Popularity::kShared});
    }
    object_modes = assign_object_modes(set, cfg.object_heavy_threshold_bps, scripted_audience(SimTime(0)));
    object_mc.assign(cfg.objects.size(), -1);
    for (std::size_t i = 0; i < cfg.objects.size(); ++i) {
      if (object_modes[i] == DeliveryMode::kMulticast) {
        object_mc[i] = open_multicast(static_cast<int>(i), cfg.objects[i].bitrate_bps, 0, 0);
      }
    }
  }

  // ---- publication ----------------------------------------------------------

  void on_publish() {
    const std::int64_t k = next_segment;
    live_edge = k;
    next_segment = k + 1;
    const SimTime now = sim.now();

    for (auto& [sid, ms] : mc_sessions) {
      if (k < ms.from || k >= ms.until || !core.bearer_open(ms.bearer)) continue;
      const int rung = ms.object < 0 ? cfg.multicast_rung : 0;
      auto packets = ms.session->enqueue_segment(k, rung, LinkTag::kMulticast);
      const double bits = 8.0 * static_cast<double>(ms.session->find_segment(k)->size_bytes);
      for (UeId ue = 0; ue < n; ++ue) {
        auto it = ues[ue].rx.find(sid);
        if (it != ues[ue].rx.end() && active(ue) && k >= it->second.from && k < it->second.until) {
          ues[ue].source_bits += bits;
        }
      }
      for (auto& p : packets) {
        if (gw && ms.object < 0) {
          GwEmission em = gw->gw_process(p);
          core.push_multicast(ms.bearer, em.multicast);
          for (auto& [ue, copy] : em.unicast) core.push_unicast(ue, copy);
        } else {
          core.push_multicast(ms.bearer, p);
        }
      }
    }

    if (cfg.delivery == ContentDelivery::kObjects) {
      for (UeId ue = 0; ue < n; ++ue) {
        if (!ues[ue].watching || !active(ue)) continue;
        for (std::size_t i = 0; i < cfg.objects.size(); ++i) {
          if (object_modes[i] != DeliveryMode::kUnicast) continue;
          sim.schedule(now + client_cfg.request_latency, EventKind::kSegmentEnqueue,
                       [this, ue, i, k] { enqueue_object_fetch(ue, static_cast<int>(i), k); });
        }
      }
    }

    if (next_segment < num_segments) {
      sim.schedule(SimTime::from_seconds(static_cast<double>(next_segment) * seg_dur),
                   EventKind::kSegmentEnqueue, [this] { on_publish(); });
    }
  }

  void enqueue_object_fetch(UeId ue, int object, std::int64_t k) {
    UeCtx& u = ues[ue];
    if (!u.watching || !active(ue) || !u.obj_sessions.at(object)) return;
    Session& s = *u.obj_sessions[object];
    if (s.last_index() && *s.last_index() + 1 != k) return;
    for (auto& p : s.enqueue_segment(k, 0, LinkTag::kUnicastPrimary)) core.push_unicast(ue, p);
  }

  void enqueue_fetch(UeId ue, FetchRequest req, bool reissue) {
    UeCtx& u = ues[ue];
    if (!u.client || u.client->quit() || u.client->current_download() != req.download_id) return;
    std::vector<Packet> packets;
    if (reissue && u.uc_session && u.uc_session->last_index() == req.position) {
      packets = u.uc_session->reissue_last(req.rung, LinkTag::kUnicastPrimary);
    } else {
      if (!u.uc_session || (u.uc_session->last_index() && *u.uc_session->last_index() + 1 != req.position)) {
        // A new unicast stint (or a skipped position) starts a fresh session.
        const SessionId id = next_session_id++;
        u.uc_session = std::make_unique<Session>(id, 0, DeliveryMode::kUnicast, ladder, seg_dur,
                                                 static_cast<std::uint32_t>(cfg.payload_bytes));
        uc_routes[id] = UcRoute{ue, -1};
      }
      packets = u.uc_session->enqueue_segment(req.position, req.rung, LinkTag::kUnicastPrimary);
    }
    for (auto& p : packets) {
      p.download_id = req.download_id;
      core.push_unicast(ue, p);
    }
  }

  // ---- scheduler -------------------------------------------------------------

  double effective_mbsfn(UeId ue) const {
    return in_outage(ue, sim.now()) ? -std::numeric_limits<double>::infinity() : ue_radio[ue].sinr_mbsfn_db;
  }

  void on_tti() {
    const SimTime now = sim.now();
    for (UeId ue = 0; ue < n; ++ue) {
      const UeRadio& r = ue_radio[ue];
      UeLinkView& v = views[ue];
      v.cell = cell_index.at(r.serving_cell);
      v.active = active(ue);
      v.unicast_bits_per_prb = in_outage(ue, now) ? 0.0 : link.rate_bits_per_prb(unicast_sinr(ue));
    }
    TtiResult res = core.schedule_tti(now, views);
    update_cell_load();

    for (const auto& [bearer, p] : res.multicast) {
      if (p.session == kAlertSession) {
        alert_multicast(p);
        continue;
      }
      const McSession& ms = mc_sessions.at(p.session);
      const int mcs = core.bearer_mcs(ms.bearer);
      for (UeId ue = 0; ue < n; ++ue) {
        auto it = ues[ue].rx.find(p.session);
        if (it == ues[ue].rx.end() || !active(ue)) continue;
        McRx& rx = it->second;
        if (p.segment_index < rx.from || p.segment_index >= rx.until) continue;
        if (!link.table().decodable(effective_mbsfn(ue), mcs)) continue;
        if (scripted_losses.count({ue, p.seq}) != 0 && p.session == first_main_session()) continue;
        ingest(ue, rx, p);
      }
    }

    for (const auto& [ue, p] : res.unicast) {
      UeCtx& u = ues[ue];
      u.unicast_bits += p.bits();
      if (!active(ue)) u.bits_after_quit += p.bits();
      if (p.session == kAlertSession) {
        alert_unicast(ue, p);
        continue;
      }
      if (p.tag == LinkTag::kUnicastDuplicate || p.tag == LinkTag::kUnicastRepair) {
        auto it = u.rx.find(p.session);
        if (it != u.rx.end()) ingest(ue, it->second, p);
        continue;
      }
      auto route = uc_routes.find(p.session);
      if (route == uc_routes.end()) continue;
      if (route->second.object < 0) {
        if (u.client && u.client->on_unicast_bytes(p.download_id, p.payload_bytes, now)) {
          u.source_bits += 8.0 * static_cast<double>(segment_size_bytes(
                                     ladder.at(u.client->abr().current_rung).bits_per_s, seg_dur));
        }
      } else {
        object_bytes(ue, route->second.object, p);
      }
    }

    flush_closed_sessions();
    alert_followup();

    if (now + kTti < horizon) sim.schedule(now + kTti, EventKind::kSchedulerTick, [this] { on_tti(); });
  }

  SessionId first_main_session() const {
    for (const auto& [sid, ms] : mc_sessions) {
      if (ms.object < 0) return sid;
    }
    return -1;
  }

  void object_bytes(UeId ue, int object, const Packet& p) {
    UeCtx& u = ues[ue];
    auto key = std::make_pair(p.session, p.segment_index);
    const std::int64_t got = (u.obj_bytes[key] += p.payload_bytes);
    const std::int64_t need = segment_size_bytes(cfg.objects[object].bitrate_bps, seg_dur);
    if (got < need) return;
    u.obj_bytes.erase(key);
    u.source_bits += 8.0 * static_cast<double>(need);
    object_ready(ue, object, p.segment_index);
  }

  void object_ready(UeId ue, int object, std::int64_t position) {
    UeCtx& u = ues[ue];
    if (!u.client || !u.composer) return;
    if (u.composer->object_ready(position, object)) {
      u.client->segment_ready(position, 0, sim.now());
      u.composer->forget_before(u.client->playback().playhead());
    }
  }

  void ingest(UeId ue, McRx& rx, const Packet& p) {
    MergeOutput out = rx.merge.ingest(p, sim.now());
    handle_merge_output(ue, rx, out);
  }

  void handle_merge_output(UeId ue, McRx& rx, const MergeOutput& out) {
    UeCtx& u = ues[ue];
    const McSession& ms = mc_sessions.at(rx.session);
    for (const auto& p : out.delivered) {
      if (p.tag == LinkTag::kUnicastRepair) ++u.repair_packets;
      const SegmentSpan* span = ms.session->find_segment(p.segment_index);
      if (span == nullptr) continue;
      if (++rx.assembly[p.segment_index] == span->packet_count) {
        rx.assembly.erase(p.segment_index);
        if (ms.object < 0) {
          if (u.client) u.client->segment_ready(p.segment_index, cfg.multicast_rung, sim.now());
        } else {
          object_ready(ue, ms.object, p.segment_index);
        }
      }
    }
    std::int64_t last_lost = -1;
    for (std::uint64_t seq : out.lost) {
      const SegmentSpan* span = ms.session->find_by_seq(seq);
      if (span == nullptr || span->index == last_lost) continue;
      last_lost = span->index;
      rx.assembly.erase(span->index);
      if (u.client) u.client->segment_lost(span->index, sim.now());
    }
  }

  // A session that stopped at `until` is flushed once its bearer has drained.
  void flush_closed_sessions() {
    for (auto& [sid, ms] : mc_sessions) {
      if (ms.until == kOpenEnd || core.bearer_open(ms.bearer)) continue;
      const SegmentSpan* last = ms.session->find_segment(ms.until - 1);
      const std::uint64_t end = last ? last->end_seq() : ms.session->next_seq();
      for (UeId ue = 0; ue < n; ++ue) {
        auto it = ues[ue].rx.find(sid);
        if (it == ues[ue].rx.end() || it->second.flushed) continue;
        it->second.flushed = true;
        MergeOutput out = it->second.merge.flush_through(end);
        handle_merge_output(ue, it->second, out);
      }
    }
  }

  // ---- clients ---------------------------------------------------------------

  void on_client_tick() {
    const SimTime now = sim.now();
    for (UeId ue = 0; ue < n; ++ue) {
      UeCtx& u = ues[ue];
      if (!u.watching || !u.client) continue;
      if (u.client->quit()) {
        continue;
      }
      ClientTickResult r = u.client->tick(now, client_dt);
      if (r.cancel) {
        const std::int64_t old_id = r.cancel->first;
        core.purge_unicast(ue, [old_id](const Packet& p) {
          return p.tag == LinkTag::kUnicastPrimary && p.download_id == old_id;
        });
        const FetchRequest req = r.cancel->second;
        sim.schedule(now + client_cfg.request_latency, EventKind::kSegmentEnqueue,
                     [this, ue, req] { enqueue_fetch(ue, req, true); });
      }
      if (r.quit) {
        on_quit(ue);
        continue;
      }
      if (auto req = u.client->next_request(now, live_edge)) {
        const FetchRequest fr = *req;
        sim.schedule(now + client_cfg.request_latency, EventKind::kSegmentEnqueue,
                     [this, ue, fr] { enqueue_fetch(ue, fr, false); });
      }
      if (mood && now >= u.next_report) {
        mood->report(ConsumptionReport{ue, 0, now});
        u.next_report = now + SimTime::from_seconds(cfg.report_interval_s);
      }
      if (ml_cfg.repair_enabled) request_repairs(ue);
    }
    if (now + client_dt <= horizon) {
      sim.schedule(now + client_dt, EventKind::kClientTick, [this] { on_client_tick(); });
    }
  }

  void request_repairs(UeId ue) {
    UeCtx& u = ues[ue];
    for (auto& [sid, rx] : u.rx) {
      for (const RepairRequest& req : rx.merge.due_repairs(sim.now())) {
        ++u.repair_requests;
        const SessionId s = sid;
        sim.schedule(sim.now() + client_cfg.request_latency, EventKind::kSegmentEnqueue,
                     [this, ue, s, req] { serve_repair(ue, s, req); });
      }
    }
  }

  void serve_repair(UeId ue, SessionId sid, RepairRequest req) {
    if (!active(ue)) return;
    auto it = ues[ue].rx.find(sid);
    if (it == ues[ue].rx.end()) return;
    const Session& s = *mc_sessions.at(sid).session;
    for (std::uint64_t seq = std::max(req.first, it->second.merge.next_expected()); seq < req.end; ++seq) {
      if (auto p = s.regenerate(seq, LinkTag::kUnicastRepair)) core.push_unicast(ue, *p);
    }
  }

  void on_quit(UeId ue) {
    UeCtx& u = ues[ue];
    core.purge_unicast(ue, [](const Packet&) { return true; });
    if (gw) gw->set_duplication(ue, false);
    if (mood) mood->forget(ue);
    for (auto& [sid, rx] : u.rx) retire_merge(u, rx);
    u.rx.clear();
    // The client object stays around to answer quit queries; its history
    // moves to the archive now.
    archive_client(ue);
  }

  // ---- mobility ---------------------------------------------------------------

  void on_mobility(SimTime step) {
    radio.mobility_step(ue_radio, step, mobility_rng, cfg.turn_interval_s);
    refresh_powers();
    if (gw) {
      for (UeId ue = 0; ue < n; ++ue) {
        if (ues[ue].watching && active(ue) && ues[ue].rx.count(main_mc) != 0) {
          gw->update(ue, effective_mbsfn(ue));
        }
      }
    }
    const SimTime next = sim.now() + step;
    if (next < horizon) sim.schedule(next, EventKind::kMobilityStep, [this, step] { on_mobility(step); });
  }

  // ---- MooD -------------------------------------------------------------------

  void on_mood_evaluate(SimTime every) {
    if (auto cmd = mood->evaluate(sim.now())) {
      sim.schedule(cmd->completes_at, EventKind::kMoodEvaluate, [this] { on_switch_complete(); });
    }
    const SimTime next = sim.now() + every;
    if (next < horizon) sim.schedule(next, EventKind::kMoodEvaluate, [this, every] { on_mood_evaluate(every); });
  }

  void on_switch_complete() {
    auto cmd = mood->complete_pending(sim.now());
    if (!cmd) return;
    const std::int64_t boundary = next_segment;
    const int top = static_cast<int>(ladder.size()) - 1;
    if (cmd->to == MoodMode::kMulticast) {
      open_main_multicast(boundary);
      for (UeId ue = 0; ue < n; ++ue) {
        UeCtx& u = ues[ue];
        if (!u.watching || !u.client || u.client->quit()) continue;
        add_rx(ue, main_mc, boundary);
        u.client->limit_unicast(boundary);
        u.client->note(sim.now(), TraceEvent::kSwitch, cfg.multicast_rung);
      }
    } else {
      McSession& ms = mc_sessions.at(main_mc);
      ms.until = boundary;
      core.close_bearer_when_drained(ms.bearer);
      for (UeId ue = 0; ue < n; ++ue) {
        UeCtx& u = ues[ue];
        auto it = u.rx.find(main_mc);
        if (it != u.rx.end()) it->second.until = boundary;
        if (!u.watching || !u.client || u.client->quit()) continue;
        // The stream was already playing at the top rung.
        u.client->start_unicast(boundary, ladder[top].bits_per_s / client_cfg.safety_factor, top);
        u.client->note(sim.now(), TraceEvent::kSwitch, top);
      }
      main_mc = -1;
    }
  }

  // ---- alert --------------------------------------------------------------------

  void on_alert() {
    carousel.emplace(kAlertSession, cfg.alert_size_bytes, cfg.alert_rounds,
                     static_cast<std::uint32_t>(cfg.payload_bytes));
    alert_bearer = core.open_bearer(kAlertSession, cfg.alert_mcs, cfg.alert_bitrate_bps);
    for (int r = 0; r < cfg.alert_rounds; ++r) {
      for (const auto& p : carousel->round_packets(r)) core.push_multicast(alert_bearer, p);
    }
    core.close_bearer_when_drained(alert_bearer);
    alert.clear();
    for (UeId ue = 0; ue < n; ++ue) {
      carousel->add_receiver(ue);
      alert.push_back(AlertOutcome{ue, ues[ue].capable, ues[ue].edge, std::nullopt, 0, 0});
      if (!ues[ue].capable) {
        for (std::uint64_t s = 0; s < carousel->packets_per_round(); ++s) {
          core.push_unicast(ue, carousel->packet(s, LinkTag::kUnicastPrimary));
        }
      }
    }
  }

  void alert_done(UeId ue) {
    AlertOutcome& o = alert[ue];
    if (o.completed_at) return;
    o.completed_at = sim.now();
    ues[ue].source_bits += 8.0 * static_cast<double>(cfg.alert_size_bytes);
  }

  void alert_multicast(const Packet& p) {
    const int mcs = core.bearer_mcs(alert_bearer);
    for (UeId ue = 0; ue < n; ++ue) {
      if (!ues[ue].capable || !link.table().decodable(effective_mbsfn(ue), mcs)) continue;
      if (carousel->complete(ue)) continue;
      const auto missing_before = alert[ue].completed_at.has_value();
      if (!missing_before) ++alert[ue].multicast_packets;
      if (carousel->receive(ue, p)) alert_done(ue);
    }
  }

  void alert_unicast(UeId ue, const Packet& p) {
    if (!carousel) return;
    ++alert[ue].unicast_packets;
    if (carousel->receive(ue, p)) alert_done(ue);
  }

  // Capable UEs still missing packets after the last round fetch the rest
  // over unicast.
  void alert_followup() {
    if (!carousel || alert_repair_done || core.bearer_open(alert_bearer)) return;
    alert_repair_done = true;
    for (UeId ue = 0; ue < n; ++ue) {
      if (!ues[ue].capable || carousel->complete(ue)) continue;
      for (std::uint64_t s : carousel->missing(ue)) core.push_unicast(ue, carousel->packet(s, LinkTag::kUnicastRepair));
    }
  }

  // ---- results --------------------------------------------------------------------

  std::vector<PlaybackRecord> records_of(UeId ue) const {
    const UeCtx& u = ues[ue];
    std::vector<PlaybackRecord> r = u.past_records;
    if (u.client && !u.quit_archived) {
      const auto& cur = u.client->playback().records();
      r.insert(r.end(), cur.begin(), cur.end());
    }
    return r;
  }

  std::vector<TraceRow> trace_of(UeId ue) const {
    const UeCtx& u = ues[ue];
    std::vector<TraceRow> t = u.past_trace;
    if (u.client && !u.quit_archived) {
      const auto& cur = u.client->trace();
      t.insert(t.end(), cur.begin(), cur.end());
    }
    return t;
  }

  std::vector<StallEpisode> episodes_of(UeId ue) const {
    const UeCtx& u = ues[ue];
    std::vector<StallEpisode> e = u.past_episodes;
    if (u.client && !u.quit_archived) {
      const auto& cur = u.client->playback().episodes();
      e.insert(e.end(), cur.begin(), cur.end());
    }
    return e;
  }

  double top_bitrate() const {
    if (cfg.delivery == ContentDelivery::kObjects) {
      double total = 0.0;
      for (const auto& o : cfg.objects) total += o.bitrate_bps;
      return total;
    }
    return ladder.back().bits_per_s;
  }

  std::vector<std::vector<MosSample>> mos_all() const {
    std::vector<std::vector<MosSample>> out(static_cast<std::size_t>(n));
    for (UeId ue = 0; ue < n; ++ue) {
      const auto recs = records_of(ue);
      out[ue] = mos_series(recs, top_bitrate(), seg_dur, qoe_cfg);
    }
    return out;
  }

  KpiReport kpis() const {
    KpiReport k;
    k.preset = cfg.preset;
    k.seed = cfg.seed;
    k.duration_s = cfg.duration_s;
    k.num_ues = n;
    k.num_cells = core.config().num_cells;
    long double mc = 0, uc = 0, total = 0;
    for (const auto& log : core.logs()) {
      for (const auto& r : log.rows()) {
        mc += r.prbs_multicast;
        uc += r.prbs_unicast;
        total += r.prbs_total;
      }
    }
    try {
      k.avg_resource_consumption = avg_resource_consumption(core.logs());
    } catch (const std::domain_error&) {
      k.avg_resource_consumption.reset();
    }
    if (total > 0) {
      k.multicast_prb_share = static_cast<double>(mc / total);
      k.unicast_prb_share = static_cast<double>(uc / total);
    }
    for (const auto& u : ues) k.source_bits += u.source_bits;
    if (k.avg_resource_consumption) {
      k.al_se = al_se(k.source_bits, cfg.duration_s, k.num_cells * cfg.bandwidth_mhz * 1e6,
                      *k.avg_resource_consumption);
    }

    const auto series = mos_all();
    std::vector<double> per;
    for (UeId ue = 0; ue < n; ++ue) {
      const UeCtx& u = ues[ue];
      if (!u.ever_watched) continue;
      UeKpi q;
      q.ue = ue;
      q.quit = u.client && u.client->quit();
      q.run_mean_mos = q.quit ? 1.0 : run_mean_mos(series[ue]);
      for (const auto& e : episodes_of(ue)) q.stall_s += e.duration_s;
      for (const auto& r : records_of(ue)) {
        if (r.new_episode) ++q.stall_episodes;
        if (r.rung) ++q.played_positions;
        else ++q.skipped_positions;
      }
      if (q.quit) ++k.quit_count;
      per.push_back(q.run_mean_mos);
      k.per_ue.push_back(q);
    }
    if (!per.empty()) {
      k.fraction_max_mos = fraction_at_least(per, qoe_cfg.max_mos_threshold);
      double s = 0.0;
      for (double v : per) s += v;
      k.mean_mos = s / static_cast<double>(per.size());
    }
    if (carousel) {
      int reached = 0;
      for (const auto& o : alert) reached += o.completed_at ? 1 : 0;
      k.alert_reached = reached;
      k.alert_targets = static_cast<int>(alert.size());
    }
    std::ostringstream thr;
    thr << qoe_cfg.max_mos_threshold;
    k.extra["max_mos_threshold"] = thr.str();
    k.extra["delivery"] = to_string(cfg.delivery);
    k.extra["qoe_caveat"] =
        "MOS is the built-in linear bitrate/stall model; absolute values are not comparable to field studies";
    if (gw) {
      std::int64_t dup = 0;
      for (UeId ue = 0; ue < n; ++ue) dup += gw->duplicate_bits(ue);
      k.extra["duplicate_bits"] = std::to_string(dup);
    }
    std::int64_t repairs = 0;
    for (const auto& u : ues) repairs += u.repair_requests;
    k.extra["repair_requests"] = std::to_string(repairs);
    if (mood) k.extra["switches"] = std::to_string(mood->switch_log().size());
    k.warnings = warnings;
    k.warnings.insert(k.warnings.end(), core.warnings().begin(), core.warnings().end());
    return k;
  }

  std::vector<MergeStats> merge_stats() const {
    std::vector<MergeStats> out;
    for (const auto& u : ues) {
      MergeStats s = u.retired_merge;
      for (const auto& [sid, rx] : u.rx) {
        const MergeStats& m = rx.merge.stats();
        s.received += m.received;
        s.duplicates_discarded += m.duplicates_discarded;
        s.repaired += m.repaired;
        s.declared_lost += m.declared_lost;
        s.stale_dropped += m.stale_dropped;
      }
      out.push_back(s);
    }
    return out;
  }

  void finish() {
    if (ran_to_end) return;
    ran_to_end = true;
    for (auto& u : ues) {
      if (u.client && !u.client->quit()) u.client->playback().close(sim.now());
    }
  }
};

Scenario::Scenario(ScenarioConfig cfg) {
  cfg.validate();
  impl_ = std::make_unique<Impl>(std::move(cfg));
}

Scenario::~Scenario() = default;

void Scenario::run() {
  // Events at exactly the horizon are outside the run.
  if (impl_->horizon.ticks() > 0) impl_->sim.run_until(impl_->horizon - kTti);
  impl_->finish();
}

void Scenario::run_until(SimTime t) { impl_->sim.run_until(t); }

const ScenarioConfig& Scenario::config() const { return impl_->cfg; }
int Scenario::num_ues() const { return impl_->n; }
SimTime Scenario::now() const { return impl_->sim.now(); }
std::span<const ResourceLog> Scenario::resource_logs() const { return impl_->core.logs(); }

std::vector<SwitchLogEntry> Scenario::switch_log() const {
  return impl_->mood ? impl_->mood->switch_log() : std::vector<SwitchLogEntry>{};
}

std::vector<MergeStats> Scenario::merge_stats() const { return impl_->merge_stats(); }
const std::vector<AlertOutcome>& Scenario::alert_outcomes() const { return impl_->alert; }
std::vector<TraceRow> Scenario::trace(UeId ue) const { return impl_->trace_of(ue); }
std::vector<PlaybackRecord> Scenario::records(UeId ue) const { return impl_->records_of(ue); }
std::vector<StallEpisode> Scenario::stall_episodes(UeId ue) const { return impl_->episodes_of(ue); }

std::optional<SimTime> Scenario::quit_at(UeId ue) const {
  const auto& c = impl_->ues.at(ue).client;
  return c ? c->quit_at() : std::nullopt;
}

const UeRadio& Scenario::radio(UeId ue) const { return impl_->ue_radio.at(ue); }
const RadioModel& Scenario::radio_model() const { return impl_->radio; }
std::int64_t Scenario::repair_requests(UeId ue) const { return impl_->ues.at(ue).repair_requests; }
std::int64_t Scenario::repair_packets(UeId ue) const { return impl_->ues.at(ue).repair_packets; }
std::int64_t Scenario::duplicate_bits(UeId ue) const { return impl_->gw ? impl_->gw->duplicate_bits(ue) : 0; }
std::int64_t Scenario::bits_after_quit(UeId ue) const { return impl_->ues.at(ue).bits_after_quit; }
std::int64_t Scenario::reports_after_quit(UeId ue) const { return impl_->ues.at(ue).reports_after_quit; }
std::int64_t Scenario::unicast_bits(UeId ue) const { return impl_->ues.at(ue).unicast_bits; }

int Scenario::content_multicast_prbs() const {
  if (impl_->main_mc < 0) return 0;
  const auto& ms = impl_->mc_sessions.at(impl_->main_mc);
  if (!impl_->core.bearer_open(ms.bearer)) return 0;
  return std::min(impl_->core.multicast_prbs_for(impl_->ladder.at(impl_->cfg.multicast_rung).bits_per_s,
                                                 impl_->cfg.multicast_mcs),
                  impl_->core.broadcast_cap_prbs());
}

const std::vector<std::string>& Scenario::warnings() const { return impl_->warnings; }
std::uint64_t Scenario::event_digest() const { return impl_->sim.log_digest(); }
KpiReport Scenario::kpis() const { return impl_->kpis(); }

namespace {

void write_file(const std::filesystem::path& p, const std::string& content) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + p.string());
  out << content;
}

}  // namespace

void Scenario::write_outputs(const std::filesystem::path& dir) const {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "traces");
  const Impl& s = *impl_;

  for (std::size_t c = 0; c < s.core.logs().size(); ++c) {
    std::ostringstream o;
    s.core.logs()[c].write_csv(o);
    write_file(dir / ("resources_cell" + std::to_string(c) + ".csv"), o.str());
  }
  for (UeId ue = 0; ue < s.n; ++ue) {
    std::ostringstream o;
    write_trace_csv(o, s.trace_of(ue));
    write_file(dir / "traces" / ("ue_" + std::to_string(ue) + ".csv"), o.str());
  }
  {
    std::ostringstream o;
    write_switch_log_csv(o, switch_log());
    write_file(dir / "switch_log.csv", o.str());
  }
  {
    std::ostringstream o;
    write_merge_stats_csv(o, s.merge_stats());
    write_file(dir / "merge_stats.csv", o.str());
  }
  const KpiReport report = s.kpis();
  {
    std::ostringstream o;
    report.write(o);
    write_file(dir / "kpi_report.txt", o.str());
  }
  {
    std::ostringstream o;
    write_mos_series_csv(o, s.mos_all());
    write_file(dir / "mos_series.csv", o.str());
  }
  {
    std::ostringstream o;
    std::vector<double> per;
    for (const auto& u : report.per_ue) per.push_back(u.run_mean_mos);
    if (per.empty()) o << "mos,cumulative_fraction\n";
    else write_qoe_cdf_csv(o, qoe_cdf(per));
    write_file(dir / "qoe_cdf.csv", o.str());
  }
  if (s.carousel) {
    std::ostringstream o;
    write_alert_csv(o, s.alert);
    write_file(dir / "alert.csv", o.str());
  }
  if (s.cfg.write_event_log) write_file(dir / "events.log", s.event_log.str());
}

}  // namespace mcsim
