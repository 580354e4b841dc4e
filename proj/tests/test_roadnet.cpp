#include <catch2/catch_amalgamated.hpp>

#include "tsim/roadnet.hpp"

using namespace tsim;
using nlohmann::json;

namespace {

ErrorKind kind_of(const std::function<void()>& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.kind();
    }
    FAIL("expected a tsim::Error");
    return ErrorKind::BadConfig;
}

}  // namespace

TEST_CASE("corridor generator wires lanes, signals and successors", "[roadnet]") {
    const auto [net, plan] = gen_corridor(3, 150.0, 11.0, 30.0, 20.0);
    REQUIRE(net.num_lanes() == 3);
    CHECK(net.intersections.size() == 2);
    for (int i = 0; i < 3; ++i) {
        CHECK(net.lane(i).length == 150.0);
        CHECK(net.lane(i).speed_limit == 11.0);
    }
    CHECK(net.lane(0).successors == std::vector<int>{1});
    CHECK(net.lane(1).successors == std::vector<int>{2});
    CHECK(net.lane(2).successors.empty());
    CHECK(net.lane(0).downstream_intersection == 0);
    CHECK(net.lane(1).downstream_intersection == 1);
    CHECK(net.lane(2).downstream_intersection == -1);
    REQUIRE(plan.programs.size() == 2);
    CHECK(plan.program(0).cycle_length() == 50.0);
    CHECK_NOTHROW(net.validate());
    CHECK_NOTHROW(plan.validate(net));
}

TEST_CASE("phase lookup uses half-open windows and wraps", "[roadnet]") {
    const auto [net, plan] = gen_corridor(2, 100.0, 10.0, 30.0, 20.0);
    CHECK(phase_at(plan, 0, 0.0) == 0);
    CHECK(phase_at(plan, 0, 29.999) == 0);
    CHECK(phase_at(plan, 0, 30.0) == 1);
    CHECK(phase_at(plan, 0, 49.999) == 1);
    CHECK(phase_at(plan, 0, 50.0) == 0);
    CHECK(phase_at(plan, 0, 130.0) == 1);
    CHECK(signal_permits(plan, 0, 0, 0.0));
    CHECK(signal_permits(plan, 0, 0, 29.0));
    CHECK_FALSE(signal_permits(plan, 0, 0, 30.0));
    CHECK_FALSE(signal_permits(plan, 0, 0, 49.0));
    CHECK(signal_permits(plan, 0, 0, 50.0));
    // Lane 1 is never listed in intersection 0's phases.
    CHECK_FALSE(signal_permits(plan, 0, 1, 0.0));
}

TEST_CASE("network validation rejects malformed inputs", "[roadnet]") {
    RoadNetwork net;
    net.lanes.push_back(Lane{1, 100.0, 10.0, -1, {}});
    CHECK(kind_of([&] { net.validate(); }) == ErrorKind::MalformedInput);

    RoadNetwork neg;
    neg.lanes.push_back(Lane{0, -5.0, 10.0, -1, {}});
    CHECK(kind_of([&] { neg.validate(); }) == ErrorKind::MalformedInput);

    RoadNetwork badsucc;
    badsucc.lanes.push_back(Lane{0, 100.0, 10.0, -1, {7}});
    CHECK(kind_of([&] { badsucc.validate(); }) == ErrorKind::MalformedInput);

    RoadNetwork badint;
    badint.lanes.push_back(Lane{0, 100.0, 10.0, 3, {}});
    CHECK(kind_of([&] { badint.validate(); }) == ErrorKind::UnknownIntersection);
}

TEST_CASE("flow validation enforces ids, routes and ordering", "[roadnet]") {
    const auto [net, plan] = gen_corridor(2, 100.0, 10.0, 30.0, 20.0);
    (void)plan;

    FlowSpec dup;
    dup.vehicles.push_back(FlowVehicle{0, 0, {0, 1}});
    dup.vehicles.push_back(FlowVehicle{0, 1, {0, 1}});
    CHECK(kind_of([&] { dup.validate(net); }) == ErrorKind::InconsistentFlow);

    FlowSpec unlinked;
    unlinked.vehicles.push_back(FlowVehicle{0, 0, {1, 0}});
    CHECK(kind_of([&] { unlinked.validate(net); }) == ErrorKind::InconsistentFlow);

    FlowSpec backwards;
    backwards.vehicles.push_back(FlowVehicle{0, 5, {0, 1}});
    backwards.vehicles.push_back(FlowVehicle{1, 3, {0, 1}});
    CHECK(kind_of([&] { backwards.validate(net); }) == ErrorKind::InconsistentFlow);

    FlowSpec ok;
    ok.vehicles.push_back(FlowVehicle{0, 0, {0, 1}});
    ok.vehicles.push_back(FlowVehicle{1, 4, {0, 1}});
    CHECK_NOTHROW(ok.validate(net));
}

TEST_CASE("network json round trip preserves every field", "[roadnet]") {
    const auto [net, plan] = gen_corridor(3, 123.5, 9.25, 17.0, 13.0);
    const RoadNetwork back = network_from_json(network_to_json(net));
    REQUIRE(back.num_lanes() == net.num_lanes());
    for (int i = 0; i < net.num_lanes(); ++i) {
        CHECK(back.lane(i).length == net.lane(i).length);
        CHECK(back.lane(i).speed_limit == net.lane(i).speed_limit);
        CHECK(back.lane(i).downstream_intersection == net.lane(i).downstream_intersection);
        CHECK(back.lane(i).successors == net.lane(i).successors);
    }
    const SignalPlan plan_back = signal_plan_from_json(signal_plan_to_json(plan), back);
    REQUIRE(plan_back.programs.size() == plan.programs.size());
    CHECK(plan_back.program(1).cycle.size() == 2);
    CHECK(plan_back.program(1).cycle[0].duration == 17.0);
    CHECK(plan_back.program(1).cycle[0].green == std::vector<int>{1});
    CHECK(plan_back.program(1).cycle[1].green.empty());

    const FlowSpec flow = gen_spaced_flow(net, {0, 1, 2}, 4, 2, 3);
    const FlowSpec flow_back = flow_from_json(flow_to_json(flow), net);
    REQUIRE(flow_back.vehicles.size() == 4);
    for (std::size_t i = 0; i < 4; ++i) {
        CHECK(flow_back.vehicles[i].id == static_cast<int>(i));
        CHECK(flow_back.vehicles[i].enter == 2 + 3 * static_cast<int>(i));
        CHECK(flow_back.vehicles[i].route == std::vector<int>{0, 1, 2});
    }
}

TEST_CASE("json loaders reject missing keys", "[roadnet]") {
    CHECK(kind_of([] { network_from_json(json::object()); }) == ErrorKind::MalformedInput);
    CHECK(kind_of([] { network_from_json(json{{"lanes", 3}}); }) == ErrorKind::MalformedInput);
    const auto [net, plan] = gen_corridor(2, 100.0, 10.0, 30.0, 20.0);
    (void)plan;
    CHECK(kind_of([&] { signal_plan_from_json(json::object(), net); }) ==
          ErrorKind::MalformedInput);
    CHECK(kind_of([&] { flow_from_json(json::object(), net); }) == ErrorKind::MalformedInput);
    CHECK(kind_of([] { detail::parse_json_text("{broken", "inline"); }) ==
          ErrorKind::MalformedInput);
}

TEST_CASE("spaced flow rejects bad schedules", "[roadnet]") {
    const auto [net, plan] = gen_corridor(2, 100.0, 10.0, 30.0, 20.0);
    (void)plan;
    CHECK(kind_of([&] { gen_spaced_flow(net, {0, 1}, 3, 0, 0); }) == ErrorKind::BadConfig);
    CHECK(kind_of([&] { gen_spaced_flow(net, {0, 1}, -1, 0, 1); }) == ErrorKind::BadConfig);
    const FlowSpec empty = gen_spaced_flow(net, {0, 1}, 0, 0, 1);
    CHECK(empty.vehicles.empty());
}
