#pragma once

#include <cstdio>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "tsim/roadnet.hpp"

namespace tsim {

struct DynamicsConfig {
    double a_max = 2.0;           // max acceleration, m/s^2
    double b_max = 4.0;           // max comfortable deceleration, m/s^2
    double v_cap = 11.0;          // global speed cap, m/s
    double tau = 1.0;             // driver reaction time, s
    double dt = 1.0;              // step length, s
    double vehicle_length = 5.0;  // bumper-to-bumper footprint, m

    void validate() const {
        require(a_max > 0.0 && b_max > 0.0 && v_cap > 0.0, ErrorKind::BadConfig,
                "dynamics: a_max, b_max, v_cap must be positive");
        require(tau > 0.0 && dt > 0.0 && vehicle_length > 0.0, ErrorKind::BadConfig,
                "dynamics: tau, dt, vehicle_length must be positive");
    }
};

// Fixed-layout feature vector: M lane indicators followed by 11 scalar
// entries. The layout is part of the wire format, so offsets live here and
// nowhere else.
class Observation {
  public:
    static constexpr int kExtra = 11;

    Observation() = default;
    explicit Observation(int num_lanes)
        : m_(num_lanes), f_(static_cast<std::size_t>(num_lanes) + kExtra, 0.0) {}
    Observation(int num_lanes, std::vector<double> values) : m_(num_lanes), f_(std::move(values)) {
        require(static_cast<int>(f_.size()) == m_ + kExtra, ErrorKind::DimensionMismatch,
                "observation: expected " + std::to_string(m_ + kExtra) + " entries, got " +
                    std::to_string(f_.size()));
    }

    int num_lanes() const { return m_; }
    int dim() const { return m_ + kExtra; }
    const std::vector<double>& values() const { return f_; }

    void set_lane(int lane) {
        for (int i = 0; i < m_; ++i) f_[static_cast<std::size_t>(i)] = (i == lane) ? 1.0 : 0.0;
    }
    int lane() const {
        for (int i = 0; i < m_; ++i)
            if (f_[static_cast<std::size_t>(i)] == 1.0) return i;
        return -1;
    }

    double lane_length() const { return f_[idx(0)]; }
    double speed_limit() const { return f_[idx(1)]; }
    double signal_green() const { return f_[idx(2)]; }
    double velocity() const { return f_[idx(3)]; }
    double position() const { return f_[idx(4)]; }
    double dist_to_light() const { return f_[idx(5)]; }
    double leader_velocity() const { return f_[idx(6)]; }
    double leader_position() const { return f_[idx(7)]; }
    double gap() const { return f_[idx(8)]; }
    double is_leading() const { return f_[idx(9)]; }
    double has_exited() const { return f_[idx(10)]; }

    void set_lane_length(double v) { f_[idx(0)] = v; }
    void set_speed_limit(double v) { f_[idx(1)] = v; }
    void set_signal_green(double v) { f_[idx(2)] = v; }
    void set_velocity(double v) { f_[idx(3)] = v; }
    void set_position(double v) { f_[idx(4)] = v; }
    void set_dist_to_light(double v) { f_[idx(5)] = v; }
    void set_leader_velocity(double v) { f_[idx(6)] = v; }
    void set_leader_position(double v) { f_[idx(7)] = v; }
    void set_gap(double v) { f_[idx(8)] = v; }
    void set_is_leading(double v) { f_[idx(9)] = v; }
    void set_has_exited(double v) { f_[idx(10)] = v; }

  private:
    std::size_t idx(int k) const { return static_cast<std::size_t>(m_ + k); }

    int m_ = 0;
    std::vector<double> f_;
};

// Affine input normalization applied at every network boundary. The scales are
// saved with model checkpoints so a checkpoint fully determines its inputs.
struct ObservationScaler {
    std::vector<double> scale;

    ObservationScaler() = default;
    ObservationScaler(int num_lanes, double v_cap) {
        scale.assign(static_cast<std::size_t>(num_lanes), 1.0);
        const double s[Observation::kExtra] = {
            1.0 / 1000.0,   // lane_length
            1.0 / v_cap,    // speed_limit
            1.0,            // signal_green
            1.0 / v_cap,    // velocity
            1.0 / 1000.0,   // position
            1.0 / 100.0,    // dist_to_light
            1.0 / v_cap,    // leader_velocity
            1.0 / 1000.0,   // leader_position
            1.0 / 100.0,    // gap
            1.0,            // is_leading
            1.0,            // has_exited
        };
        scale.insert(scale.end(), s, s + Observation::kExtra);
    }

    std::vector<double> apply(const Observation& obs) const {
        require(obs.dim() == static_cast<int>(scale.size()), ErrorKind::DimensionMismatch,
                "scaler built for dim " + std::to_string(scale.size()) + ", observation has dim " +
                    std::to_string(obs.dim()));
        std::vector<double> out(scale.size());
        for (std::size_t i = 0; i < scale.size(); ++i) out[i] = obs.values()[i] * scale[i];
        return out;
    }
};

// ---------------------------------------------------------------------------
// Krauss car following.

// Largest speed that still lets the follower come to rest behind the leader
// if the leader brakes at full b_max, under reaction time tau.
inline double krauss_safe_speed(double v_self, double v_leader, double gap,
                                const DynamicsConfig& dyn) {
    const double v_safe =
        v_leader + (gap - v_leader * dyn.tau) / ((v_self + v_leader) / (2.0 * dyn.b_max) + dyn.tau);
    return std::max(0.0, v_safe);
}

// Deterministic Krauss controller: drive as fast as the limit, the
// acceleration budget and safety allow. A RED signal acts as a stationary
// obstacle at the stop line; there is no stochastic slowdown.
inline double krauss_action(const Observation& obs, const DynamicsConfig& dyn) {
    const double hi = std::min(obs.speed_limit(), dyn.v_cap);
    double v = std::min(hi, obs.velocity() + dyn.a_max * dyn.dt);
    if (obs.is_leading() == 0.0)
        v = std::min(v, krauss_safe_speed(obs.velocity(), obs.leader_velocity(), obs.gap(), dyn));
    else if (obs.signal_green() == 0.0)
        v = std::min(v, krauss_safe_speed(obs.velocity(), 0.0, obs.dist_to_light(), dyn));
    return v;
}

// ---------------------------------------------------------------------------
// Trajectory recording.

// One transition of one vehicle: state at t, the realized action, state at
// t+1. `lane`, `pos`, `speed` duplicate the observation for cheap access.
struct StepRecord {
    int t = 0;
    int lane = 0;
    double pos = 0.0;
    double speed = 0.0;
    double action = 0.0;
    Observation obs;
    Observation next_obs;
    // Route-cumulative position, filled by TrajectorySet::finalize().
    double cpos = 0.0;
};

struct VehicleTrack {
    int vehicle = 0;
    std::vector<StepRecord> records;
};

class TrajectorySet {
  public:
    std::vector<VehicleTrack> tracks;
    // Set when produced by a simulation run; file round trips leave it empty
    // and fall back on the latest record time.
    std::optional<int> horizon;

    bool empty() const { return tracks.empty(); }

    std::size_t num_records() const {
        std::size_t n = 0;
        for (const VehicleTrack& t : tracks) n += t.records.size();
        return n;
    }

    int derived_horizon() const {
        int h = 0;
        for (const VehicleTrack& tr : tracks)
            for (const StepRecord& r : tr.records) h = std::max(h, r.t + 1);
        return h;
    }

    int effective_horizon() const { return horizon ? *horizon : derived_horizon(); }

    VehicleTrack& track_for(int vehicle) {
        for (VehicleTrack& t : tracks)
            if (t.vehicle == vehicle) return t;
        tracks.push_back(VehicleTrack{vehicle, {}});
        return tracks.back();
    }

    const VehicleTrack* find_track(int vehicle) const {
        for (const VehicleTrack& t : tracks)
            if (t.vehicle == vehicle) return &t;
        return nullptr;
    }

    // Orders records and rebuilds route-cumulative positions. Lane lengths are
    // read off the stored observations, so a set loaded from disk needs no
    // network object.
    void finalize() {
        std::sort(tracks.begin(), tracks.end(),
                  [](const VehicleTrack& a, const VehicleTrack& b) { return a.vehicle < b.vehicle; });
        for (VehicleTrack& tr : tracks) {
            std::sort(tr.records.begin(), tr.records.end(),
                      [](const StepRecord& a, const StepRecord& b) { return a.t < b.t; });
            double offset = 0.0;
            for (std::size_t k = 0; k < tr.records.size(); ++k) {
                if (k > 0 && tr.records[k].lane != tr.records[k - 1].lane)
                    offset += tr.records[k - 1].obs.lane_length();
                tr.records[k].cpos = offset + tr.records[k].pos;
            }
        }
    }

    void save_jsonl(const std::string& path) const;
    static TrajectorySet load_jsonl(const std::string& path);
};

namespace detail {

inline std::string fmt_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

inline void append_array(std::string& out, const std::vector<double>& v) {
    out += '[';
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) out += ',';
        out += fmt_double(v[i]);
    }
    out += ']';
}

}  // namespace detail

inline void TrajectorySet::save_jsonl(const std::string& path) const {
    std::string out;
    for (const VehicleTrack& tr : tracks) {
        for (const StepRecord& r : tr.records) {
            out += "{\"veh\":" + std::to_string(tr.vehicle);
            out += ",\"t\":" + std::to_string(r.t);
            out += ",\"lane\":" + std::to_string(r.lane);
            out += ",\"pos\":" + detail::fmt_double(r.pos);
            out += ",\"speed\":" + detail::fmt_double(r.speed);
            out += ",\"action\":" + detail::fmt_double(r.action);
            out += ",\"obs\":";
            detail::append_array(out, r.obs.values());
            out += ",\"next_obs\":";
            detail::append_array(out, r.next_obs.values());
            out += "}\n";
        }
    }
    detail::write_text_file(path, out);
}

inline TrajectorySet TrajectorySet::load_jsonl(const std::string& path) {
    std::ifstream in(path);
    require(in.good(), ErrorKind::IoFailure, "cannot open " + path);
    TrajectorySet ts;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        nlohmann::json j =
            detail::parse_json_text(line, path + ":" + std::to_string(line_no));
        for (const char* key : {"veh", "t", "lane", "pos", "speed", "action", "obs", "next_obs"})
            require(j.contains(key), ErrorKind::MalformedInput,
                    path + ":" + std::to_string(line_no) + ": missing \"" + key + "\"");
        StepRecord r;
        const int veh = j["veh"].get<int>();
        r.t = j["t"].get<int>();
        r.lane = j["lane"].get<int>();
        r.pos = j["pos"].get<double>();
        r.speed = j["speed"].get<double>();
        r.action = j["action"].get<double>();
        std::vector<double> obs = j["obs"].get<std::vector<double>>();
        std::vector<double> nxt = j["next_obs"].get<std::vector<double>>();
        require(obs.size() == nxt.size() && static_cast<int>(obs.size()) > Observation::kExtra,
                ErrorKind::MalformedInput,
                path + ":" + std::to_string(line_no) + ": bad observation length");
        const int m = static_cast<int>(obs.size()) - Observation::kExtra;
        r.obs = Observation(m, std::move(obs));
        r.next_obs = Observation(m, std::move(nxt));
        ts.track_for(veh).records.push_back(std::move(r));
    }
    ts.finalize();
    return ts;
}

// ---------------------------------------------------------------------------
// Environment.

struct VehicleState {
    int id = 0;
    int lane = -1;
    double pos = 0.0;
    double speed = 0.0;
    int route_index = 0;
    std::vector<int> route;
    int enter = 0;
    bool active = false;
    int exit_step = -1;
};

struct StepResult {
    int t = 0;
    // Observations after the step: active vehicles plus, once, vehicles that
    // exited during this step (their final observation, has_exited = 1).
    std::map<int, Observation> obs;
    std::map<int, bool> done;
    // Realized speed of each vehicle that acted; this is the action recorded
    // in trajectories since clamping may have modified the request.
    std::map<int, double> realized;
};

class Env {
  public:
    Env(RoadNetwork net, SignalPlan plan, FlowSpec flow, DynamicsConfig dyn)
        : net_(std::move(net)), plan_(std::move(plan)), flow_(std::move(flow)), dyn_(dyn) {
        net_.validate();
        plan_.validate(net_);
        flow_.validate(net_);
        dyn_.validate();
        build_lane_order();
    }

    const RoadNetwork& network() const { return net_; }
    const SignalPlan& plan() const { return plan_; }
    const DynamicsConfig& dynamics() const { return dyn_; }
    int time() const { return t_; }

    const VehicleState& state(int id) const {
        auto it = by_id_.find(id);
        require(it != by_id_.end(), ErrorKind::UnknownVehicle,
                "unknown vehicle id " + std::to_string(id));
        return vehicles_[it->second];
    }

    std::vector<int> active_ids() const {
        std::vector<int> ids;
        for (const VehicleState& v : vehicles_)
            if (v.active) ids.push_back(v.id);
        std::sort(ids.begin(), ids.end());
        return ids;
    }

    bool idle() const {
        for (const VehicleState& v : vehicles_)
            if (v.active) return false;
        for (const auto& q : pending_)
            if (!q.second.empty()) return false;
        return true;
    }

    std::map<int, Observation> reset(std::uint64_t seed = 0) {
        seed_ = seed;
        t_ = 0;
        vehicles_.clear();
        by_id_.clear();
        occupants_.assign(static_cast<std::size_t>(net_.num_lanes()), {});
        pending_.clear();
        for (const FlowVehicle& fv : flow_.vehicles) pending_[fv.route.front()].push_back(fv);
        spawn_ready();
        std::map<int, Observation> obs;
        for (const VehicleState& v : vehicles_)
            if (v.active) obs.emplace(v.id, observe_vehicle(v));
        return obs;
    }

    Observation observe(int id) const { return observe_vehicle(state(id)); }

    StepResult step(const std::map<int, double>& actions) {
        for (const auto& [id, a] : actions) {
            auto it = by_id_.find(id);
            require(it != by_id_.end() && vehicles_[it->second].active, ErrorKind::UnknownVehicle,
                    "action for unknown or inactive vehicle " + std::to_string(id));
            require(std::isfinite(a), ErrorKind::NonFiniteAction,
                    "non-finite action for vehicle " + std::to_string(id));
        }
        for (const VehicleState& v : vehicles_)
            if (v.active)
                require(actions.count(v.id) > 0, ErrorKind::MissingAction,
                        "no action for active vehicle " + std::to_string(v.id));

        StepResult res;
        std::vector<bool> processed(vehicles_.size(), false);
        std::vector<int> exited;
        const double now = t_ * dyn_.dt;

        for (int lane_id : lane_order_) {
            // Copy: the occupant list mutates as vehicles cross out.
            const std::vector<std::size_t> occ = occupants_[static_cast<std::size_t>(lane_id)];
            double front_cap = std::numeric_limits<double>::infinity();
            for (std::size_t vi : occ) {
                if (processed[vi]) continue;
                processed[vi] = true;
                VehicleState& v = vehicles_[vi];
                const bool was_exit = move_vehicle(v, actions.at(v.id), now, front_cap, res);
                if (was_exit) exited.push_back(static_cast<int>(vi));
            }
        }

        for (int vi : exited) {
            VehicleState& v = vehicles_[static_cast<std::size_t>(vi)];
            v.active = false;
            v.exit_step = t_ + 1;
        }

        check_no_overlap();
        ++t_;
        spawn_ready();

        res.t = t_;
        for (const VehicleState& v : vehicles_) {
            if (v.active) {
                res.obs.emplace(v.id, observe_vehicle(v));
                res.done.emplace(v.id, false);
            } else if (v.exit_step == t_) {
                Observation fin = observe_vehicle(v);
                fin.set_has_exited(1.0);
                res.obs.emplace(v.id, std::move(fin));
                res.done.emplace(v.id, true);
            }
        }
        return res;
    }

  private:
    // Moves one vehicle, honoring in order: the acceleration/braking envelope,
    // the leader on its current lane, signals at stop lines and room on entered
    // lanes. RED halts are best effort: a vehicle that cannot brake to the stop
    // line within b_max crosses at its minimum feasible speed, since there are
    // no amber phases to clear the approach. Leader constraints are absolute,
    // and a queue on the next lane whose rear vehicle pokes back across the
    // line shortens this lane by the overhang so halts stay clear of it.
    bool move_vehicle(VehicleState& v, double action, double now, double& front_cap,
                      StepResult& res) {
        const Lane& start_lane = net_.lane(v.lane);
        const double hi = std::min(start_lane.speed_limit, dyn_.v_cap);
        const double lower = std::max(0.0, v.speed - dyn_.b_max * dyn_.dt);
        const double upper = std::min(hi, v.speed + dyn_.a_max * dyn_.dt);
        const double cmd = std::clamp(action, lower, upper);

        double dist = cmd * dyn_.dt;                       // planned travel
        if (std::isfinite(front_cap)) dist = std::min(dist, front_cap - v.pos);
        dist = std::max(dist, 0.0);
        const double dist_floor = std::min(lower * dyn_.dt, dist);

        int li = v.lane;
        int cursor = v.route_index;
        double p = v.pos;
        double total = dist;     // travel after all caps
        double c = 0.0;          // travel consumed when positioned at p's lane origin side
        bool exited = false;

        for (;;) {
            const Lane& ln = net_.lane(li);
            const double to_line = ln.length - p;
            const bool at_route_end = cursor + 1 >= static_cast<int>(v.route.size());
            int next = -1;
            double bound = std::numeric_limits<double>::infinity();
            if (!at_route_end) {
                next = v.route[static_cast<std::size_t>(cursor) + 1];
                bound = entry_bound(next);
            }
            // A queued vehicle whose rear pokes back across the line shortens
            // the stretch of this lane that can actually be occupied.
            const double usable = at_route_end ? to_line : to_line + std::min(0.0, bound);
            if (c + usable >= total) {
                p += total - c;
                break;
            }
            const bool controlled = ln.downstream_intersection >= 0;
            if (controlled && !signal_permits(plan_, ln.downstream_intersection, li, now)) {
                if (c + usable >= dist_floor) {
                    const double advance = std::max(0.0, usable);
                    total = c + advance;
                    p += advance;
                    break;
                }
                total = dist_floor;  // cannot stop in time: crosses under braking
            }
            if (at_route_end) {
                // leaves the network at its driven speed; only the recorded
                // position caps at the lane end
                p = ln.length;
                exited = true;
                break;
            }
            if (bound < 0.0) {  // no room beyond the line: halt clear of the queue
                const double advance = std::max(0.0, usable);
                total = c + advance;
                p += advance;
                break;
            }
            c += to_line;
            li = next;
            ++cursor;
            p = 0.0;
            if (std::isfinite(bound)) total = std::min(total, c + bound);
        }

        const double realized = total / dyn_.dt;
        res.realized.emplace(v.id, realized);
        const bool lane_changed = li != v.lane;
        if (lane_changed || exited) {
            remove_occupant(v.lane, index_of(v.id));
            if (lane_changed && !exited) occupants_[static_cast<std::size_t>(li)].push_back(index_of(v.id));
        }
        v.lane = li;
        v.route_index = cursor;
        v.pos = p;
        // Speed may not legally exceed the limit of the lane now occupied.
        v.speed = std::min(realized, std::min(net_.lane(li).speed_limit, dyn_.v_cap));
        front_cap = (lane_changed || exited) ? std::numeric_limits<double>::infinity()
                                             : v.pos - dyn_.vehicle_length;
        return exited;
    }

    std::size_t index_of(int id) const { return by_id_.at(id); }

    // Rearmost usable position on a lane for a vehicle entering it this step,
    // minus nothing: returns rear position - vehicle_length, or +inf if free.
    // Unprocessed occupants are taken at their pre-step positions, which only
    // ever under-estimates the room and so stays safe.
    double entry_bound(int lane_id) const {
        const auto& occ = occupants_[static_cast<std::size_t>(lane_id)];
        if (occ.empty()) return std::numeric_limits<double>::infinity();
        double rear = std::numeric_limits<double>::infinity();
        for (std::size_t vi : occ) rear = std::min(rear, vehicles_[vi].pos);
        return rear - dyn_.vehicle_length;
    }

    void remove_occupant(int lane_id, std::size_t vi) {
        auto& occ = occupants_[static_cast<std::size_t>(lane_id)];
        occ.erase(std::remove(occ.begin(), occ.end(), vi), occ.end());
    }

    void spawn_ready() {
        for (auto& [lane_id, queue] : pending_) {
            while (!queue.empty() && queue.front().enter <= t_) {
                const auto& occ = occupants_[static_cast<std::size_t>(lane_id)];
                double rear = std::numeric_limits<double>::infinity();
                for (std::size_t vi : occ) rear = std::min(rear, vehicles_[vi].pos);
                if (rear < dyn_.vehicle_length) break;  // insertion would overlap; retry next step
                const FlowVehicle& fv = queue.front();
                VehicleState vs;
                vs.id = fv.id;
                vs.lane = fv.route.front();
                vs.pos = 0.0;
                vs.speed = 0.0;
                vs.route = fv.route;
                vs.route_index = 0;
                vs.enter = t_;
                vs.active = true;
                by_id_[vs.id] = vehicles_.size();
                occupants_[static_cast<std::size_t>(lane_id)].push_back(vehicles_.size());
                vehicles_.push_back(std::move(vs));
                queue.erase(queue.begin());
            }
        }
    }

    Observation observe_vehicle(const VehicleState& v) const {
        const Lane& ln = net_.lane(v.lane);
        Observation obs(net_.num_lanes());
        obs.set_lane(v.lane);
        obs.set_lane_length(ln.length);
        obs.set_speed_limit(ln.speed_limit);
        const bool controlled = ln.downstream_intersection >= 0;
        const bool green =
            !controlled || signal_permits(plan_, ln.downstream_intersection, v.lane, t_ * dyn_.dt);
        obs.set_signal_green(green ? 1.0 : 0.0);
        obs.set_velocity(v.speed);
        obs.set_position(v.pos);
        const double dist_light = ln.length - v.pos;
        obs.set_dist_to_light(dist_light);

        const VehicleState* leader = nullptr;
        double leader_pos = 0.0;
        if (v.active) {
            for (std::size_t vi : occupants_[static_cast<std::size_t>(v.lane)]) {
                const VehicleState& other = vehicles_[vi];
                if (other.id == v.id || other.pos <= v.pos) continue;
                if (!leader || other.pos < leader->pos) leader = &other;
            }
            if (leader) leader_pos = leader->pos;
            if (!leader && v.route_index + 1 < static_cast<int>(v.route.size())) {
                // Nobody ahead on this lane: the rearmost vehicle on the next
                // lane of the route is what the driver actually follows. That
                // keeps approaches to spilled-back queues gradual instead of
                // discovering them only at the line.
                const int next = v.route[static_cast<std::size_t>(v.route_index) + 1];
                for (std::size_t vi : occupants_[static_cast<std::size_t>(next)]) {
                    const VehicleState& other = vehicles_[vi];
                    if (!leader || other.pos < leader->pos) leader = &other;
                }
                if (leader) leader_pos = ln.length + leader->pos;
            }
        }
        if (leader) {
            obs.set_leader_velocity(leader->speed);
            obs.set_leader_position(leader_pos);
            obs.set_gap(leader_pos - v.pos - dyn_.vehicle_length);
            obs.set_is_leading(0.0);
        } else {
            obs.set_leader_velocity(0.0);
            obs.set_leader_position(ln.length);
            obs.set_gap(green ? ln.length - v.pos : dist_light);
            obs.set_is_leading(1.0);
        }
        obs.set_has_exited(0.0);
        return obs;
    }

    void check_no_overlap() const {
        for (int lane_id = 0; lane_id < net_.num_lanes(); ++lane_id) {
            const auto& occ = occupants_[static_cast<std::size_t>(lane_id)];
            for (std::size_t i = 0; i < occ.size(); ++i)
                for (std::size_t j = i + 1; j < occ.size(); ++j) {
                    const VehicleState& a = vehicles_[occ[i]];
                    const VehicleState& b = vehicles_[occ[j]];
                    const VehicleState& front = a.pos >= b.pos ? a : b;
                    const VehicleState& back = a.pos >= b.pos ? b : a;
                    require(back.pos + dyn_.vehicle_length <= front.pos + 1e-9,
                            ErrorKind::InvariantViolation,
                            "vehicles " + std::to_string(back.id) + " and " +
                                std::to_string(front.id) + " overlap on lane " +
                                std::to_string(lane_id));
                }
        }
    }

    // Lanes ordered so successors come first where the graph allows; vehicles
    // near their lane end then see final positions of downstream traffic. For
    // cyclic graphs the leftovers fall back to id order, which only makes
    // entry bounds conservative, never unsafe.
    void build_lane_order() {
        const int m = net_.num_lanes();
        std::vector<int> unplaced_succ(static_cast<std::size_t>(m), 0);
        std::vector<std::vector<int>> preds(static_cast<std::size_t>(m));
        for (const Lane& ln : net_.lanes) {
            unplaced_succ[static_cast<std::size_t>(ln.id)] = static_cast<int>(ln.successors.size());
            for (int s : ln.successors) preds[static_cast<std::size_t>(s)].push_back(ln.id);
        }
        std::vector<bool> placed(static_cast<std::size_t>(m), false);
        lane_order_.clear();
        std::vector<int> ready;
        for (int i = 0; i < m; ++i)
            if (unplaced_succ[static_cast<std::size_t>(i)] == 0) ready.push_back(i);
        while (!ready.empty()) {
            std::sort(ready.begin(), ready.end());
            const int li = ready.front();
            ready.erase(ready.begin());
            if (placed[static_cast<std::size_t>(li)]) continue;
            placed[static_cast<std::size_t>(li)] = true;
            lane_order_.push_back(li);
            for (int p : preds[static_cast<std::size_t>(li)])
                if (--unplaced_succ[static_cast<std::size_t>(p)] == 0) ready.push_back(p);
        }
        for (int i = 0; i < m; ++i)
            if (!placed[static_cast<std::size_t>(i)]) lane_order_.push_back(i);
    }

    RoadNetwork net_;
    SignalPlan plan_;
    FlowSpec flow_;
    DynamicsConfig dyn_;

    int t_ = 0;
    std::uint64_t seed_ = 0;
    std::vector<VehicleState> vehicles_;
    std::map<int, std::size_t> by_id_;
    std::vector<std::vector<std::size_t>> occupants_;
    std::map<int, std::vector<FlowVehicle>> pending_;
    std::vector<int> lane_order_;
};

// ---------------------------------------------------------------------------
// Rollout drivers.

using PolicyFn = std::function<double(int vehicle, const Observation& obs)>;

// Runs `horizon` steps from reset, querying `policy` for every active vehicle
// in ascending id order, and records every transition. Vehicles are stepped
// even when none are active so late entries still appear.
inline TrajectorySet simulate_policy(Env& env, const PolicyFn& policy, int horizon,
                                     std::uint64_t seed = 0) {
    require(horizon >= 0, ErrorKind::BadConfig, "horizon must be >= 0");
    TrajectorySet ts;
    ts.horizon = horizon;
    std::map<int, Observation> obs = env.reset(seed);
    for (int t = 0; t < horizon; ++t) {
        std::map<int, double> actions;
        for (const auto& [id, o] : obs) actions.emplace(id, policy(id, o));
        StepResult res = env.step(actions);
        for (const auto& [id, o] : obs) {
            StepRecord rec;
            rec.t = t;
            rec.lane = o.lane();
            rec.pos = o.position();
            rec.speed = o.velocity();
            rec.action = res.realized.at(id);
            rec.obs = o;
            rec.next_obs = res.obs.at(id);
            ts.track_for(id).records.push_back(std::move(rec));
        }
        obs.clear();
        for (const auto& [id, o] : res.obs)
            if (!res.done.at(id)) obs.emplace(id, o);
    }
    ts.finalize();
    return ts;
}

// Feeds recorded actions back through a fresh environment. With the same
// network, flow and dynamics this must reproduce the recording exactly.
inline TrajectorySet replay(Env& env, const TrajectorySet& source) {
    const int horizon = source.effective_horizon();
    const PolicyFn lookup = [&env, &source](int vehicle, const Observation&) {
        const VehicleTrack* tr = source.find_track(vehicle);
        require(tr != nullptr, ErrorKind::MissingAction,
                "replay: no recorded track for vehicle " + std::to_string(vehicle));
        const int t = env.time();
        for (const StepRecord& r : tr->records)
            if (r.t == t) return r.action;
        fail(ErrorKind::MissingAction, "replay: vehicle " + std::to_string(vehicle) +
                                           " has no recorded action at t=" + std::to_string(t));
    };
    return simulate_policy(env, lookup, horizon);
}

}  // namespace tsim
