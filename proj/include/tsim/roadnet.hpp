#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "tsim/common.hpp"

namespace tsim {

// Lane-level road graph. Lanes carry all geometry; intersections are
// zero-extent connectors referenced by id. Lane ids must be dense 0..M-1 so
// they can double as one-hot feature indices downstream.
struct Lane {
    int id = 0;
    double length = 0.0;
    double speed_limit = 0.0;
    // -1 when the lane ends without a controlled intersection.
    int downstream_intersection = -1;
    std::vector<int> successors;
};

struct Intersection {
    int id = 0;
};

struct RoadNetwork {
    std::vector<Lane> lanes;
    std::vector<Intersection> intersections;

    int num_lanes() const { return static_cast<int>(lanes.size()); }

    const Lane& lane(int id) const {
        require(id >= 0 && id < num_lanes(), ErrorKind::MalformedInput,
                "unknown lane id " + std::to_string(id));
        return lanes[static_cast<std::size_t>(id)];
    }

    bool has_intersection(int id) const {
        return std::any_of(intersections.begin(), intersections.end(),
                           [id](const Intersection& x) { return x.id == id; });
    }

    void validate() const {
        for (int i = 0; i < num_lanes(); ++i) {
            const Lane& ln = lanes[static_cast<std::size_t>(i)];
            require(ln.id == i, ErrorKind::MalformedInput,
                    "lane ids must be dense and ordered, got id " + std::to_string(ln.id) +
                        " at index " + std::to_string(i));
            require(std::isfinite(ln.length) && ln.length > 0.0, ErrorKind::MalformedInput,
                    "lane " + std::to_string(ln.id) + ": length must be positive");
            require(std::isfinite(ln.speed_limit) && ln.speed_limit > 0.0, ErrorKind::MalformedInput,
                    "lane " + std::to_string(ln.id) + ": speed_limit must be positive");
            if (ln.downstream_intersection >= 0)
                require(has_intersection(ln.downstream_intersection), ErrorKind::UnknownIntersection,
                        "lane " + std::to_string(ln.id) + ": downstream_intersection " +
                            std::to_string(ln.downstream_intersection) + " not defined");
            for (int s : ln.successors)
                require(s >= 0 && s < num_lanes(), ErrorKind::MalformedInput,
                        "lane " + std::to_string(ln.id) + ": successor " + std::to_string(s) +
                            " not defined");
        }
    }
};

// One entry of a signal cycle: the lanes whose downstream movement is
// permitted (GREEN) for `duration` seconds. Anything not listed faces RED.
struct SignalPhase {
    double duration = 0.0;
    std::vector<int> green;

    bool permits(int lane_id) const {
        return std::find(green.begin(), green.end(), lane_id) != green.end();
    }
};

struct IntersectionProgram {
    int intersection = 0;
    std::vector<SignalPhase> cycle;

    double cycle_length() const {
        double total = 0.0;
        for (const SignalPhase& p : cycle) total += p.duration;
        return total;
    }
};

struct SignalPlan {
    std::vector<IntersectionProgram> programs;

    const IntersectionProgram& program(int intersection) const {
        for (const IntersectionProgram& p : programs)
            if (p.intersection == intersection) return p;
        fail(ErrorKind::UnknownIntersection,
             "no signal program for intersection " + std::to_string(intersection));
    }

    void validate(const RoadNetwork& net) const {
        for (const IntersectionProgram& p : programs) {
            require(net.has_intersection(p.intersection), ErrorKind::UnknownIntersection,
                    "signal program references unknown intersection " +
                        std::to_string(p.intersection));
            require(!p.cycle.empty(), ErrorKind::MalformedInput,
                    "intersection " + std::to_string(p.intersection) + ": empty signal cycle");
            for (const SignalPhase& ph : p.cycle) {
                require(std::isfinite(ph.duration) && ph.duration > 0.0, ErrorKind::MalformedInput,
                        "intersection " + std::to_string(p.intersection) +
                            ": phase duration must be positive");
                for (int g : ph.green)
                    require(g >= 0 && g < net.num_lanes(), ErrorKind::MalformedInput,
                            "intersection " + std::to_string(p.intersection) +
                                ": green lane " + std::to_string(g) + " not defined");
            }
        }
    }
};

// Phase index in force at `time` seconds. Cycles repeat from t=0; a phase owns
// the half-open interval [start, start+duration).
inline int phase_at(const SignalPlan& plan, int intersection, double time) {
    const IntersectionProgram& prog = plan.program(intersection);
    const double cycle = prog.cycle_length();
    double tau = std::fmod(time, cycle);
    if (tau < 0.0) tau += cycle;
    double start = 0.0;
    for (std::size_t i = 0; i < prog.cycle.size(); ++i) {
        start += prog.cycle[i].duration;
        if (tau < start) return static_cast<int>(i);
    }
    return static_cast<int>(prog.cycle.size()) - 1;
}

inline bool signal_permits(const SignalPlan& plan, int intersection, int lane_id, double time) {
    const IntersectionProgram& prog = plan.program(intersection);
    return prog.cycle[static_cast<std::size_t>(phase_at(plan, intersection, time))].permits(lane_id);
}

// A vehicle's demand: when it enters the network and the full lane sequence it
// will follow. Routes never change after entry.
struct FlowVehicle {
    int id = 0;
    int enter = 0;
    std::vector<int> route;
};

struct FlowSpec {
    std::vector<FlowVehicle> vehicles;

    void validate(const RoadNetwork& net) const {
        std::vector<int> seen;
        for (const FlowVehicle& v : vehicles) {
            require(std::find(seen.begin(), seen.end(), v.id) == seen.end(),
                    ErrorKind::InconsistentFlow, "duplicate vehicle id " + std::to_string(v.id));
            seen.push_back(v.id);
            require(v.enter >= 0, ErrorKind::InconsistentFlow,
                    "vehicle " + std::to_string(v.id) + ": enter time must be >= 0");
            require(!v.route.empty(), ErrorKind::InconsistentFlow,
                    "vehicle " + std::to_string(v.id) + ": empty route");
            for (std::size_t i = 0; i < v.route.size(); ++i) {
                require(v.route[i] >= 0 && v.route[i] < net.num_lanes(), ErrorKind::InconsistentFlow,
                        "vehicle " + std::to_string(v.id) + ": route lane " +
                            std::to_string(v.route[i]) + " not defined");
                if (i + 1 < v.route.size()) {
                    const Lane& ln = net.lane(v.route[i]);
                    require(std::find(ln.successors.begin(), ln.successors.end(), v.route[i + 1]) !=
                                ln.successors.end(),
                            ErrorKind::InconsistentFlow,
                            "vehicle " + std::to_string(v.id) + ": lane " +
                                std::to_string(v.route[i + 1]) + " does not follow lane " +
                                std::to_string(v.route[i]));
                }
            }
        }
        // Entry order per entry lane must match entry times, since insertion
        // queues are FIFO.
        for (int lane = 0; lane < net.num_lanes(); ++lane) {
            int last = -1;
            for (const FlowVehicle& v : vehicles) {
                if (v.route.front() != lane) continue;
                require(v.enter >= last, ErrorKind::InconsistentFlow,
                        "vehicle " + std::to_string(v.id) +
                            ": entry times on lane " + std::to_string(lane) +
                            " must be nondecreasing");
                last = v.enter;
            }
        }
    }
};

// ---------------------------------------------------------------------------
// JSON wire formats.

namespace detail {

inline nlohmann::json parse_json_text(const std::string& text, const std::string& what) {
    nlohmann::json j = nlohmann::json::parse(text, nullptr, false);
    require(!j.is_discarded(), ErrorKind::MalformedInput, what + ": invalid JSON");
    return j;
}

inline nlohmann::json load_json_file(const std::string& path) {
    std::ifstream in(path);
    require(in.good(), ErrorKind::IoFailure, "cannot open " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_json_text(ss.str(), path);
}

inline void write_text_file(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    require(out.good(), ErrorKind::IoFailure, "cannot write " + path);
    out << text;
    require(out.good(), ErrorKind::IoFailure, "write failed for " + path);
}

}  // namespace detail

inline RoadNetwork network_from_json(const nlohmann::json& j) {
    RoadNetwork net;
    require(j.is_object() && j.contains("lanes") && j["lanes"].is_array(), ErrorKind::MalformedInput,
            "network: missing \"lanes\" array");
    for (const auto& lj : j["lanes"]) {
        Lane ln;
        require(lj.contains("id") && lj.contains("length") && lj.contains("speed_limit"),
                ErrorKind::MalformedInput, "network lane: id, length and speed_limit are required");
        ln.id = lj["id"].get<int>();
        ln.length = lj["length"].get<double>();
        ln.speed_limit = lj["speed_limit"].get<double>();
        if (lj.contains("downstream_intersection") && !lj["downstream_intersection"].is_null())
            ln.downstream_intersection = lj["downstream_intersection"].get<int>();
        if (lj.contains("successors"))
            for (const auto& s : lj["successors"]) ln.successors.push_back(s.get<int>());
        net.lanes.push_back(std::move(ln));
    }
    if (j.contains("intersections"))
        for (const auto& ij : j["intersections"]) {
            require(ij.contains("id"), ErrorKind::MalformedInput, "network intersection: id required");
            net.intersections.push_back(Intersection{ij["id"].get<int>()});
        }
    std::sort(net.lanes.begin(), net.lanes.end(),
              [](const Lane& a, const Lane& b) { return a.id < b.id; });
    net.validate();
    return net;
}

inline nlohmann::json network_to_json(const RoadNetwork& net) {
    nlohmann::json j;
    j["lanes"] = nlohmann::json::array();
    for (const Lane& ln : net.lanes) {
        nlohmann::json lj;
        lj["id"] = ln.id;
        lj["length"] = ln.length;
        lj["speed_limit"] = ln.speed_limit;
        if (ln.downstream_intersection >= 0)
            lj["downstream_intersection"] = ln.downstream_intersection;
        else
            lj["downstream_intersection"] = nullptr;
        lj["successors"] = ln.successors;
        j["lanes"].push_back(lj);
    }
    j["intersections"] = nlohmann::json::array();
    for (const Intersection& x : net.intersections) j["intersections"].push_back({{"id", x.id}});
    return j;
}

inline SignalPlan signal_plan_from_json(const nlohmann::json& j, const RoadNetwork& net) {
    SignalPlan plan;
    require(j.is_object() && j.contains("intersections") && j["intersections"].is_array(),
            ErrorKind::MalformedInput, "signal plan: missing \"intersections\" array");
    for (const auto& pj : j["intersections"]) {
        IntersectionProgram prog;
        require(pj.contains("id") && pj.contains("cycle"), ErrorKind::MalformedInput,
                "signal program: id and cycle are required");
        prog.intersection = pj["id"].get<int>();
        for (const auto& phj : pj["cycle"]) {
            SignalPhase ph;
            require(phj.contains("duration"), ErrorKind::MalformedInput,
                    "signal phase: duration required");
            ph.duration = phj["duration"].get<double>();
            if (phj.contains("green"))
                for (const auto& g : phj["green"]) ph.green.push_back(g.get<int>());
            prog.cycle.push_back(std::move(ph));
        }
        plan.programs.push_back(std::move(prog));
    }
    plan.validate(net);
    return plan;
}

inline nlohmann::json signal_plan_to_json(const SignalPlan& plan) {
    nlohmann::json j;
    j["intersections"] = nlohmann::json::array();
    for (const IntersectionProgram& prog : plan.programs) {
        nlohmann::json pj;
        pj["id"] = prog.intersection;
        pj["cycle"] = nlohmann::json::array();
        for (const SignalPhase& ph : prog.cycle)
            pj["cycle"].push_back({{"duration", ph.duration}, {"green", ph.green}});
        j["intersections"].push_back(pj);
    }
    return j;
}

inline FlowSpec flow_from_json(const nlohmann::json& j, const RoadNetwork& net) {
    FlowSpec flow;
    require(j.is_object() && j.contains("vehicles") && j["vehicles"].is_array(),
            ErrorKind::MalformedInput, "flow: missing \"vehicles\" array");
    for (const auto& vj : j["vehicles"]) {
        FlowVehicle v;
        require(vj.contains("id") && vj.contains("enter") && vj.contains("route"),
                ErrorKind::MalformedInput, "flow vehicle: id, enter and route are required");
        v.id = vj["id"].get<int>();
        v.enter = vj["enter"].get<int>();
        for (const auto& r : vj["route"]) v.route.push_back(r.get<int>());
        flow.vehicles.push_back(std::move(v));
    }
    flow.validate(net);
    return flow;
}

inline nlohmann::json flow_to_json(const FlowSpec& flow) {
    nlohmann::json j;
    j["vehicles"] = nlohmann::json::array();
    for (const FlowVehicle& v : flow.vehicles)
        j["vehicles"].push_back({{"id", v.id}, {"enter", v.enter}, {"route", v.route}});
    return j;
}

// ---------------------------------------------------------------------------
// Generators.

// A chain of `n_lanes` lanes joined by signalized intersections. Intersection
// i sits between lane i and lane i+1 and runs a two-phase cycle: `green`
// seconds permitting lane i, then `red` seconds permitting nothing. The final
// lane ends uncontrolled.
inline std::pair<RoadNetwork, SignalPlan> gen_corridor(int n_lanes, double lane_length,
                                                       double speed_limit, double green,
                                                       double red) {
    require(n_lanes >= 1, ErrorKind::BadConfig, "corridor needs at least one lane");
    require(lane_length > 0.0 && speed_limit > 0.0, ErrorKind::BadConfig,
            "corridor lane_length and speed_limit must be positive");
    require(green > 0.0 && red > 0.0, ErrorKind::BadConfig,
            "corridor green and red durations must be positive");
    RoadNetwork net;
    SignalPlan plan;
    for (int i = 0; i < n_lanes; ++i) {
        Lane ln;
        ln.id = i;
        ln.length = lane_length;
        ln.speed_limit = speed_limit;
        if (i + 1 < n_lanes) {
            ln.downstream_intersection = i;
            ln.successors = {i + 1};
        }
        net.lanes.push_back(std::move(ln));
    }
    for (int i = 0; i + 1 < n_lanes; ++i) {
        net.intersections.push_back(Intersection{i});
        IntersectionProgram prog;
        prog.intersection = i;
        prog.cycle.push_back(SignalPhase{green, {i}});
        prog.cycle.push_back(SignalPhase{red, {}});
        plan.programs.push_back(std::move(prog));
    }
    net.validate();
    plan.validate(net);
    return {net, plan};
}

// Evenly spaced single-route demand: `count` vehicles entering every `every`
// steps starting at `start`, all following `route`.
inline FlowSpec gen_spaced_flow(const RoadNetwork& net, const std::vector<int>& route, int count,
                                int start, int every) {
    require(count >= 0 && every >= 1 && start >= 0, ErrorKind::BadConfig,
            "spaced flow: count >= 0, every >= 1, start >= 0 required");
    FlowSpec flow;
    for (int i = 0; i < count; ++i)
        flow.vehicles.push_back(FlowVehicle{i, start + i * every, route});
    flow.validate(net);
    return flow;
}

}  // namespace tsim
