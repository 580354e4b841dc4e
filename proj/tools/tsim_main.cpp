#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <numeric>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "CLI11.hpp"
#include "tsim/baselines.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json default_config() {
    return json{
        {"seed", 0},
        {"horizon", 120},
        {"network",
         {{"lanes", 2}, {"lane_length", 150.0}, {"speed_limit", 11.0}, {"green", 30.0},
          {"red", 30.0}}},
        {"flow", {{"vehicles", 10}, {"start", 0}, {"every", 4}}},
        {"dynamics",
         {{"a_max", 2.0}, {"b_max", 4.0}, {"v_cap", 11.0}, {"tau", 1.0}, {"dt", 1.0},
          {"vehicle_length", 5.0}}},
        {"reward", {{"lambda", 1.0}, {"v_max", 11.0}, {"g_min", 25.0}}},
        {"train",
         {{"iterations", 200}, {"update_period", 50}, {"disc_epochs", 5}, {"gen_epochs", 10},
          {"batch_size", 64}, {"disc_lr", 0.001}, {"gamma", 0.99}, {"gae_lambda", 0.95},
          {"delta", 0.01}, {"damping", 0.1}}},
        {"expert_train", {{"iterations", 150}, {"update_period", 50}, {"gen_epochs", 10}}},
        {"bc", {{"epochs", 100}, {"batch_size", 64}, {"lr", 0.001}}},
        {"calibration",
         {{"bounds", {{"a_max", {0.5, 4.5}}, {"b_max", {1.0, 6.0}}, {"v_cap", {6.0, 14.0}}}},
          {"trials", 30}, {"iters", 5}, {"steps", {0.5, 0.5, 1.0}}, {"tabu_len", 8}}},
        {"surface",
         {{"speeds", {{"min", 0.5}, {"max", 11.0}, {"count", 20}}},
          {"gaps", {{"min", 1.0}, {"max", 50.0}, {"count", 20}}}}},
        {"transfer",
         {{"iterations", 150}, {"update_period", 50}, {"gen_epochs", 10},
          {"eval_horizon", 100}}},
    };
}

json merge_config(json base, const json& over) {
    if (!base.is_object() || !over.is_object()) return over;
    for (const auto& [k, v] : over.items())
        base[k] = base.contains(k) ? merge_config(base[k], v) : v;
    return base;
}

struct Scenario {
    tsim::RoadNetwork net;
    tsim::SignalPlan plan;
    tsim::FlowSpec flow;
    tsim::DynamicsConfig dyn;
    tsim::RewardParams rp;
    int horizon = 0;
    std::uint64_t seed = 0;
};

tsim::DynamicsConfig dynamics_from(const json& d) {
    tsim::DynamicsConfig dyn;
    dyn.a_max = d.at("a_max");
    dyn.b_max = d.at("b_max");
    dyn.v_cap = d.at("v_cap");
    dyn.tau = d.at("tau");
    dyn.dt = d.at("dt");
    dyn.vehicle_length = d.at("vehicle_length");
    dyn.validate();
    return dyn;
}

tsim::RewardParams reward_from(const json& r) {
    tsim::RewardParams rp;
    rp.lambda = r.at("lambda");
    rp.v_max = r.at("v_max");
    rp.g_min = r.at("g_min");
    rp.validate();
    return rp;
}

Scenario make_scenario(const json& cfg) {
    Scenario sc;
    const json& n = cfg.at("network");
    if (n.contains("file")) {
        sc.net = tsim::network_from_json(tsim::detail::load_json_file(n.at("file")));
        tsim::require(n.contains("signal_file"), tsim::ErrorKind::BadConfig,
                      "network.file requires network.signal_file");
        sc.plan = tsim::signal_plan_from_json(tsim::detail::load_json_file(n.at("signal_file")),
                                              sc.net);
    } else {
        auto [net, plan] = tsim::gen_corridor(n.at("lanes"), n.at("lane_length"),
                                              n.at("speed_limit"), n.at("green"), n.at("red"));
        sc.net = std::move(net);
        sc.plan = std::move(plan);
    }
    const json& f = cfg.at("flow");
    if (f.contains("file")) {
        sc.flow = tsim::flow_from_json(tsim::detail::load_json_file(f.at("file")), sc.net);
    } else {
        std::vector<int> route(static_cast<std::size_t>(sc.net.num_lanes()));
        std::iota(route.begin(), route.end(), 0);
        sc.flow = tsim::gen_spaced_flow(sc.net, route, f.at("vehicles"), f.at("start"),
                                        f.at("every"));
    }
    sc.dyn = dynamics_from(cfg.at("dynamics"));
    sc.rp = reward_from(cfg.at("reward"));
    sc.horizon = cfg.at("horizon");
    sc.seed = cfg.at("seed").get<std::uint64_t>();
    return sc;
}

tsim::GaeConfig gae_from(const json& t) {
    tsim::GaeConfig g;
    g.gamma = t.value("gamma", g.gamma);
    g.lambda = t.value("gae_lambda", g.lambda);
    return g;
}

tsim::TrpoConfig trpo_from(const json& t) {
    tsim::TrpoConfig c;
    c.delta = t.value("delta", c.delta);
    c.damping = t.value("damping", c.damping);
    return c;
}

tsim::PsairlConfig psairl_config_from(const json& t, int horizon, std::uint64_t seed) {
    tsim::PsairlConfig c;
    c.iterations = t.at("iterations");
    c.update_period = t.at("update_period");
    c.disc_epochs = t.at("disc_epochs");
    c.gen_epochs = t.at("gen_epochs");
    c.batch_size = t.at("batch_size");
    c.disc_lr = t.at("disc_lr");
    c.horizon = horizon;
    c.gae = gae_from(t);
    c.trpo = trpo_from(t);
    c.seed = seed;
    return c;
}

tsim::RewardTrainConfig reward_train_config_from(const json& t, int horizon, std::uint64_t seed) {
    tsim::RewardTrainConfig c;
    c.iterations = t.at("iterations");
    c.update_period = t.at("update_period");
    c.gen_epochs = t.at("gen_epochs");
    c.horizon = horizon;
    c.gae = gae_from(t);
    c.trpo = trpo_from(t);
    c.seed = seed;
    return c;
}

std::vector<double> linspace_from(const json& g) {
    const double lo = g.at("min");
    const double hi = g.at("max");
    const int count = g.at("count");
    tsim::require(count >= 1 && hi >= lo, tsim::ErrorKind::BadConfig,
                  "grid spec needs count >= 1 and max >= min");
    std::vector<double> out;
    if (count == 1) {
        out.push_back(lo);
        return out;
    }
    for (int i = 0; i < count; ++i)
        out.push_back(lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(count - 1));
    return out;
}

std::vector<double> parse_double_list(const std::string& text, std::size_t expected) {
    std::vector<double> out;
    std::size_t start = 0;
    while (start <= text.size()) {
        const std::size_t comma = text.find(',', start);
        const std::string tok = text.substr(start, comma == std::string::npos ? std::string::npos
                                                                              : comma - start);
        try {
            std::size_t used = 0;
            out.push_back(std::stod(tok, &used));
            tsim::require(used == tok.size(), tsim::ErrorKind::BadConfig, "");
        } catch (...) {
            tsim::fail(tsim::ErrorKind::BadConfig, "cannot parse number \"" + tok + "\"");
        }
        if (comma == std::string::npos) break;
        start = comma + 1;
    }
    tsim::require(out.size() == expected, tsim::ErrorKind::BadConfig,
                  "expected " + std::to_string(expected) + " comma-separated numbers, got " +
                      std::to_string(out.size()));
    return out;
}

tsim::DynamicsConfig parse_dyn_overrides(const tsim::DynamicsConfig& base,
                                         const std::string& text) {
    tsim::DynamicsConfig dyn = base;
    std::size_t start = 0;
    while (start < text.size()) {
        const std::size_t comma = text.find(',', start);
        const std::string tok = text.substr(start, comma == std::string::npos ? std::string::npos
                                                                              : comma - start);
        const std::size_t eq = tok.find('=');
        tsim::require(eq != std::string::npos, tsim::ErrorKind::BadConfig,
                      "dynamics override must look like key=value, got \"" + tok + "\"");
        const std::string key = tok.substr(0, eq);
        const double val = parse_double_list(tok.substr(eq + 1), 1)[0];
        if (key == "a_max")
            dyn.a_max = val;
        else if (key == "b_max")
            dyn.b_max = val;
        else if (key == "v_cap")
            dyn.v_cap = val;
        else if (key == "tau")
            dyn.tau = val;
        else if (key == "dt")
            dyn.dt = val;
        else if (key == "vehicle_length")
            dyn.vehicle_length = val;
        else
            tsim::fail(tsim::ErrorKind::BadConfig, "unknown dynamics key \"" + key + "\"");
        if (comma == std::string::npos) break;
        start = comma + 1;
    }
    dyn.validate();
    return dyn;
}

tsim::CfmBounds bounds_from(const json& b) {
    tsim::CfmBounds out;
    const auto pick = [&b](const char* key, double& lo, double& hi) {
        const json& iv = b.at(key);
        tsim::require(iv.is_array() && iv.size() == 2, tsim::ErrorKind::BadConfig,
                      std::string("calibration bound ") + key + " must be [lo, hi]");
        lo = iv[0];
        hi = iv[1];
    };
    pick("a_max", out.lo.a_max, out.hi.a_max);
    pick("b_max", out.lo.b_max, out.hi.b_max);
    pick("v_cap", out.lo.v_cap, out.hi.v_cap);
    out.validate();
    return out;
}

void write_json_file(const fs::path& path, const json& j) {
    tsim::detail::write_text_file(path.string(), j.dump(2) + "\n");
}

void save_reward_train_log(const std::vector<tsim::RewardTrainLogRow>& log,
                           const fs::path& path) {
    std::string out = "iter,mean_reward,mean_true_reward\n";
    char buf[96];
    for (const tsim::RewardTrainLogRow& r : log) {
        std::snprintf(buf, sizeof(buf), "%d,%.10g,%.10g\n", r.iter, r.mean_reward,
                      r.mean_true_reward);
        out += buf;
    }
    tsim::detail::write_text_file(path.string(), out);
}

tsim::PolicyFn krauss_policy(const tsim::DynamicsConfig& dyn) {
    return [dyn](int, const tsim::Observation& o) { return tsim::krauss_action(o, dyn); };
}

void run_gen_net(const json& cfg, const fs::path& dir) {
    const Scenario sc = make_scenario(cfg);
    write_json_file(dir / "network.json", tsim::network_to_json(sc.net));
    write_json_file(dir / "signal.json", tsim::signal_plan_to_json(sc.plan));
    write_json_file(dir / "flow.json", tsim::flow_to_json(sc.flow));
}

void run_gen_expert(const json& cfg, const fs::path& dir, const std::string& source) {
    const Scenario sc = make_scenario(cfg);
    tsim::TrajectorySet expert;
    if (source == "krauss") {
        tsim::Env env(sc.net, sc.plan, sc.flow, sc.dyn);
        expert = tsim::simulate_policy(env, krauss_policy(sc.dyn), sc.horizon, sc.seed);
    } else {
        tsim::Env env(sc.net, sc.plan, sc.flow, sc.dyn);
        const tsim::RewardTrainConfig rtc =
            reward_train_config_from(cfg.at("expert_train"), sc.horizon, sc.seed);
        const tsim::DynamicsConfig dyn = sc.dyn;
        const tsim::RewardParams rp = sc.rp;
        const auto rfn = [dyn, rp](const tsim::Observation& o) {
            return tsim::handcrafted_reward(o, dyn, rp);
        };
        tsim::RewardTrainResult res = tsim::train_policy_on_reward(env, rfn, rtc);
        tsim::save_policy(res.policy, (dir / "expert_policy.json").string());
        save_reward_train_log(res.log, dir / "expert_train_log.csv");
        tsim::Env eval_env(sc.net, sc.plan, sc.flow, sc.dyn);
        expert = tsim::simulate_policy(eval_env, tsim::mean_policy(res.policy), sc.horizon,
                                       sc.seed);
    }
    expert.save_jsonl((dir / "expert.jsonl").string());
    const tsim::Metrics m = tsim::compute_metrics(expert, expert, sc.dyn, sc.rp);
    write_json_file(dir / "self_metrics.json", tsim::metrics_to_json(m));
}

void run_train(const json& cfg, const fs::path& dir, const std::string& method,
               const std::string& expert_path) {
    const Scenario sc = make_scenario(cfg);
    const tsim::TrajectorySet expert = tsim::TrajectorySet::load_jsonl(expert_path);
    if (method == "psairl") {
        tsim::Env env(sc.net, sc.plan, sc.flow, sc.dyn);
        const tsim::PsairlConfig pc = psairl_config_from(cfg.at("train"), sc.horizon, sc.seed);
        const tsim::PsairlResult res = tsim::train_psairl(env, expert, pc, sc.rp);
        tsim::save_policy(res.policy, (dir / "policy.json").string());
        tsim::save_discriminator(res.disc, (dir / "discriminator.json").string());
        tsim::save_train_log(res.log, (dir / "train_log.csv").string());
    } else {
        const json& b = cfg.at("bc");
        tsim::BcConfig bcc;
        bcc.epochs = b.at("epochs");
        bcc.batch_size = b.at("batch_size");
        bcc.lr = b.at("lr");
        bcc.seed = sc.seed;
        const tsim::BcResult res = tsim::bc_train(expert, sc.net.num_lanes(), sc.dyn.v_cap, bcc);
        tsim::save_policy(res.policy, (dir / "bc_policy.json").string());
        std::string log = "epoch,nll\n";
        char buf[64];
        for (std::size_t e = 0; e < res.nll_per_epoch.size(); ++e) {
            std::snprintf(buf, sizeof(buf), "%zu,%.10g\n", e, res.nll_per_epoch[e]);
            log += buf;
        }
        tsim::detail::write_text_file((dir / "bc_log.csv").string(), log);
    }
}

void run_calibrate(const json& cfg, const fs::path& dir, const std::string& method,
                   const std::string& expert_path) {
    const Scenario sc = make_scenario(cfg);
    const tsim::TrajectorySet expert = tsim::TrajectorySet::load_jsonl(expert_path);
    const json& c = cfg.at("calibration");
    const tsim::CfmBounds bounds = bounds_from(c.at("bounds"));
    tsim::CalibrationScenario cs{sc.net, sc.plan, sc.flow, sc.dyn, sc.horizon};
    tsim::CalibrationResult res;
    if (method == "rs") {
        res = tsim::calibrate_random_search(cs, expert, c.at("trials"), bounds, sc.seed);
    } else {
        const json& st = c.at("steps");
        tsim::require(st.is_array() && st.size() == 3, tsim::ErrorKind::BadConfig,
                      "calibration.steps must be [a_max, b_max, v_cap]");
        const tsim::CfmParams steps{st[0], st[1], st[2]};
        res = tsim::calibrate_tabu_search(cs, expert, c.at("iters"), steps, c.at("tabu_len"),
                                          bounds);
    }
    write_json_file(dir / "calibration.json", tsim::calibration_report_to_json(method, res));
}

void run_simulate(const json& cfg, const fs::path& dir, const std::string& policy,
                  const std::string& cfm_text) {
    const Scenario sc = make_scenario(cfg);
    tsim::DynamicsConfig dyn = sc.dyn;
    tsim::PolicyFn fn;
    tsim::PolicyParams loaded;
    if (policy == "krauss") {
        fn = krauss_policy(dyn);
    } else if (policy == "cfm") {
        tsim::require(!cfm_text.empty(), tsim::ErrorKind::BadConfig,
                      "--policy cfm requires --cfm a_max,b_max,v_cap");
        const std::vector<double> p = parse_double_list(cfm_text, 3);
        dyn = tsim::apply_cfm(sc.dyn, tsim::CfmParams{p[0], p[1], p[2]});
        fn = krauss_policy(dyn);
    } else {
        loaded = tsim::load_policy(policy);
        fn = tsim::mean_policy(loaded);
    }
    tsim::Env env(sc.net, sc.plan, sc.flow, dyn);
    const tsim::TrajectorySet ts = tsim::simulate_policy(env, fn, sc.horizon, sc.seed);
    ts.save_jsonl((dir / "sim.jsonl").string());
}

void run_eval(const json& cfg, const fs::path& dir, const std::string& expert_path,
              const std::string& sim_path) {
    const Scenario sc = make_scenario(cfg);
    const tsim::TrajectorySet ref = tsim::TrajectorySet::load_jsonl(expert_path);
    const tsim::TrajectorySet sim = tsim::TrajectorySet::load_jsonl(sim_path);
    const tsim::Metrics m = tsim::compute_metrics(ref, sim, sc.dyn, sc.rp);
    write_json_file(dir / "metrics.json", tsim::metrics_to_json(m));
}

void run_surface(const json& cfg, const fs::path& dir, const std::string& model) {
    const Scenario sc = make_scenario(cfg);
    const json& s = cfg.at("surface");
    const std::vector<double> speeds = linspace_from(s.at("speeds"));
    const std::vector<double> gaps = linspace_from(s.at("gaps"));
    const tsim::Observation tmpl =
        tsim::make_surface_template(sc.net, 0, 0.5 * sc.net.lane(0).length);
    std::function<double(const tsim::Observation&)> score;
    tsim::DiscriminatorParams disc;
    if (model == "handcrafted") {
        const tsim::DynamicsConfig dyn = sc.dyn;
        const tsim::RewardParams rp = sc.rp;
        score = [dyn, rp](const tsim::Observation& o) {
            return tsim::handcrafted_reward(o, dyn, rp);
        };
    } else {
        disc = tsim::load_discriminator(model);
        score = [&disc](const tsim::Observation& o) { return tsim::reward_value(disc, o); };
    }
    const std::vector<std::vector<double>> grid =
        tsim::reward_surface(score, speeds, gaps, tmpl, sc.dyn);
    tsim::save_surface_csv(grid, speeds, gaps, (dir / "surface.csv").string());
}

void run_transfer(const json& cfg, const fs::path& dir, const std::string& policy_path,
                  const std::string& disc_path, const std::string& dyn_text) {
    const Scenario sc = make_scenario(cfg);
    const tsim::DynamicsConfig new_dyn = parse_dyn_overrides(sc.dyn, dyn_text);
    const tsim::PolicyParams old_policy = tsim::load_policy(policy_path);
    const tsim::DiscriminatorParams disc = tsim::load_discriminator(disc_path);
    const json& t = cfg.at("transfer");
    tsim::TransferConfig tc;
    tc.retrain = reward_train_config_from(t, sc.horizon, sc.seed);
    tc.eval_horizon = t.at("eval_horizon");
    tc.eval_seed = sc.seed;
    const tsim::TransferReport rep =
        tsim::run_transfer(sc.net, sc.plan, sc.flow, new_dyn, old_policy, disc, sc.rp, tc);
    write_json_file(dir / "transfer.json", tsim::transfer_report_to_json(rep));
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Microscopic traffic simulation with adversarial imitation learning"};
    app.require_subcommand(1);

    std::string config_path;
    std::string out_dir;
    std::uint64_t seed_override = 0;
    app.add_option("--config", config_path, "JSON config file; defaults fill missing keys");
    app.add_option("--out", out_dir,
                   "output directory (default: $RUN_DIR or ./runs, plus the command name)");
    CLI::Option* seed_opt = app.add_option("--seed", seed_override, "override the config seed");

    CLI::App* cmd_gen_net =
        app.add_subcommand("gen-net", "write network, signal plan and flow JSON");
    CLI::App* cmd_gen_expert =
        app.add_subcommand("gen-expert", "roll out an expert and save its trajectories");
    std::string source = "krauss";
    cmd_gen_expert->add_option("--source", source, "expert controller")
        ->check(CLI::IsMember({"krauss", "reward-policy"}));

    CLI::App* cmd_train = app.add_subcommand("train", "fit a model to expert trajectories");
    std::string train_method;
    std::string train_expert;
    cmd_train->add_option("method", train_method, "psairl or bc")
        ->required()
        ->check(CLI::IsMember({"psairl", "bc"}));
    cmd_train->add_option("--expert", train_expert, "expert trajectory JSONL")->required();

    CLI::App* cmd_calibrate =
        app.add_subcommand("calibrate", "fit car-following parameters to expert trajectories");
    std::string cal_method;
    std::string cal_expert;
    cmd_calibrate->add_option("method", cal_method, "rs (random search) or ts (tabu search)")
        ->required()
        ->check(CLI::IsMember({"rs", "ts"}));
    cmd_calibrate->add_option("--expert", cal_expert, "expert trajectory JSONL")->required();

    CLI::App* cmd_simulate = app.add_subcommand("simulate", "roll out a controller");
    std::string sim_policy;
    std::string sim_cfm;
    cmd_simulate
        ->add_option("--policy", sim_policy, "policy checkpoint path, \"krauss\", or \"cfm\"")
        ->required();
    cmd_simulate->add_option("--cfm", sim_cfm, "a_max,b_max,v_cap for --policy cfm");

    CLI::App* cmd_eval = app.add_subcommand("eval", "score simulated against expert trajectories");
    std::string eval_expert;
    std::string eval_sim;
    cmd_eval->add_option("--expert", eval_expert, "expert trajectory JSONL")->required();
    cmd_eval->add_option("--sim", eval_sim, "simulated trajectory JSONL")->required();

    CLI::App* cmd_surface = app.add_subcommand("surface", "tabulate a reward over speed and gap");
    std::string surf_model;
    cmd_surface
        ->add_option("--model", surf_model, "discriminator checkpoint path or \"handcrafted\"")
        ->required();

    CLI::App* cmd_transfer =
        app.add_subcommand("transfer", "re-optimize a recovered reward under new dynamics");
    std::string tr_policy;
    std::string tr_disc;
    std::string tr_dyn = "a_max=5,b_max=5";
    cmd_transfer->add_option("--policy", tr_policy, "policy checkpoint")->required();
    cmd_transfer->add_option("--disc", tr_disc, "discriminator checkpoint")->required();
    cmd_transfer->add_option("--dyn", tr_dyn, "dynamics overrides, e.g. a_max=5,b_max=5");

    for (CLI::App* sub : {cmd_gen_net, cmd_gen_expert, cmd_train, cmd_calibrate, cmd_simulate,
                          cmd_eval, cmd_surface, cmd_transfer})
        sub->fallthrough();

    CLI11_PARSE(app, argc, argv);

    try {
        json cfg = default_config();
        if (!config_path.empty())
            cfg = merge_config(std::move(cfg), tsim::detail::load_json_file(config_path));
        if (seed_opt->count() > 0) cfg["seed"] = seed_override;

        const std::string cmd = app.get_subcommands().front()->get_name();
        fs::path dir;
        if (!out_dir.empty()) {
            dir = out_dir;
        } else {
            const char* root = std::getenv("RUN_DIR");
            dir = fs::path(root != nullptr ? root : "runs") / cmd;
        }
        fs::create_directories(dir);
        write_json_file(dir / "config.json", cfg);

        if (cmd == "gen-net")
            run_gen_net(cfg, dir);
        else if (cmd == "gen-expert")
            run_gen_expert(cfg, dir, source);
        else if (cmd == "train")
            run_train(cfg, dir, train_method, train_expert);
        else if (cmd == "calibrate")
            run_calibrate(cfg, dir, cal_method, cal_expert);
        else if (cmd == "simulate")
            run_simulate(cfg, dir, sim_policy, sim_cfm);
        else if (cmd == "eval")
            run_eval(cfg, dir, eval_expert, eval_sim);
        else if (cmd == "surface")
            run_surface(cfg, dir, surf_model);
        else if (cmd == "transfer")
            run_transfer(cfg, dir, tr_policy, tr_disc, tr_dyn);
        return 0;
    } catch (const tsim::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 10 + static_cast<int>(e.kind());
    } catch (const nlohmann::json::exception& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 10 + static_cast<int>(tsim::ErrorKind::BadConfig);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
