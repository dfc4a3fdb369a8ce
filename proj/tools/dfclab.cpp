// dfclab — derivative-feedback control workbench.
//
// Subcommands reproduce the full study pipeline on the simulated two-disk
// levitation plant: model-based design (design), model-free multi-epoch
// policy-iteration training (train), data-driven identification plus refinement
// (identify), controller comparison under measurement bias (compare), and plain
// trajectory generation (simulate).
//
// Exit codes: 0 success, 2 usage/config error, 3 numerical failure,
// 4 insufficient excitation.

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "dfc/design.hpp"
#include "dfc/errors.hpp"
#include "dfc/linmodel.hpp"
#include "dfc/maglev.hpp"
#include "dfc/matio.hpp"
#include "dfc/mfpi.hpp"
#include "dfc/sim.hpp"
#include "dfc/sysid.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kToolVersion = "1.0.0";

// ---------------------------------------------------------------------------
// Presets
// ---------------------------------------------------------------------------

json maglev_defaults() {
    return json{{"M", 0.126}, {"g", 9.81},        {"c1", 0.96},  {"c2", 0.96},
                {"a", 4.0442e4}, {"b", 0.0591},   {"c", 4.4408e-8}, {"d", 0.042},
                {"y_c", 0.133},  {"y10", 0.01},   {"y20", -0.02}};
}

json identity_weights() {
    json q = {{"shape", {4, 4}},
              {"data", {{1.0, 0.0, 0.0, 0.0},
                        {0.0, 1.0, 0.0, 0.0},
                        {0.0, 0.0, 1.0, 0.0},
                        {0.0, 0.0, 0.0, 1.0}}}};
    json r = {{"shape", {2, 2}}, {"data", {{1.0, 0.0}, {0.0, 2.0}}}};
    return json{{"Q", q}, {"R", r}};
}

// Ideal simulation protocol: linear reference plant, exact derivatives,
// broadband excitation, tight epoch tolerance.
json preset_ideal_sim() {
    return json{
        {"plant", "reference-linear"},
        {"maglev", maglev_defaults()},
        {"weights", identity_weights()},
        {"ts", 1e-3},
        {"duration", 2.0},
        {"excitation",
         {{"amplitude", 0.1}, {"freq_low", -100.0}, {"freq_high", 100.0}, {"num_tones", 20}}},
        {"derivative_mode", "ideal"},
        {"filter", {{"order", 2}, {"cutoff_hz", 2.0}}},
        {"settle_discard", 0.0},
        {"noise_std", {0.0, 0.0, 0.0, 0.0}},
        {"bias", {0.0, 0.0, 0.0, 0.0}},
        {"x0", {0.0, 0.0, 0.0, 0.0}},
        {"test_x0", {0.005, 0.0, -0.005, 0.0}},
        {"test_duration", 8.0},
        {"pi",
         {{"window", 0.01},
          {"eta_bar", 1e-6},
          {"zeta_bar", 1e-8},
          {"max_inner_iters", 60},
          {"max_epochs", 10},
          {"min_epochs", 1},
          {"ridge", 0.0},
          {"require_inner_convergence", true}}},
        {"initial_gain", "nominal-k1"},
        {"saturation", {{"enabled", false}, {"limit", 4.0}}},
        {"include_cross_forces", true},
        {"dmdc", {{"e_min", 0.99}, {"q_override", 0}}},
        {"identify_seeds", {1, 2}},
        {"seed", 1}};
}

// Hardware-like protocol: nonlinear plant, sensor noise, filtered derivative
// estimation with consistent signal filtering, single PI sweep per epoch,
// coarse epoch tolerance, saturation on.
json preset_hardware_like() {
    json j = preset_ideal_sim();
    j["plant"] = "nonlinear";
    j["duration"] = 4.0;
    j["excitation"] =
        json{{"amplitude", 0.05}, {"freq_low", -20.0}, {"freq_high", 20.0}, {"num_tones", 20}};
    j["derivative_mode"] = "filtered";
    j["settle_discard"] = 1.0;
    j["noise_std"] = {1e-5, 1e-4, 1e-5, 1e-4};
    j["bias"] = {0.002, 0.0, -0.001, 0.0};
    j["pi"] = json{{"window", 0.05},
                   {"eta_bar", 1e-6},
                   {"zeta_bar", 0.005},
                   {"max_inner_iters", 1},
                   {"max_epochs", 5},
                   {"min_epochs", 3},
                   {"ridge", 0.0},
                   {"require_inner_convergence", false}};
    j["initial_gain"] = "detuned-design";
    j["saturation"] = json{{"enabled", true}, {"limit", 4.0}};
    return j;
}

// Identification protocol: open-loop small-signal excitation of the nonlinear
// plant around equilibrium, two seeded runs, energy-rule truncation with the
// fixed order used for the four-state plant.
json preset_identification() {
    json j = preset_ideal_sim();
    j["plant"] = "nonlinear";
    j["duration"] = 4.0;
    j["excitation"] =
        json{{"amplitude", 0.03}, {"freq_low", -40.0}, {"freq_high", 40.0}, {"num_tones", 20}};
    j["saturation"] = json{{"enabled", true}, {"limit", 4.0}};
    j["dmdc"] = json{{"e_min", 0.99}, {"q_override", 4}};
    return j;
}

json preset_by_name(const std::string& name) {
    if (name == "ideal-sim") return preset_ideal_sim();
    if (name == "hardware-like") return preset_hardware_like();
    if (name == "identification") return preset_identification();
    throw dfc::UsageError("unknown preset: " + name +
                          " (expected ideal-sim, hardware-like, or identification)");
}

void merge_into(json& base, const json& overlay) {
    if (!overlay.is_object() || !base.is_object()) {
        base = overlay;
        return;
    }
    for (auto it = overlay.begin(); it != overlay.end(); ++it) {
        if (base.contains(it.key()))
            merge_into(base[it.key()], it.value());
        else
            base[it.key()] = it.value();
    }
}

// ---------------------------------------------------------------------------
// Config
// ---------------------------------------------------------------------------

struct Config {
    std::string plant;
    dfc::MaglevParams params;
    double y10 = 0.01, y20 = -0.02;
    Eigen::MatrixXd Q, R;
    double ts = 1e-3;
    double duration = 2.0;
    dfc::ExcitationSpec excitation;  // seed field re-derived per run
    std::string derivative_mode;
    dfc::FilterSpec filter;
    double settle_discard = 0.0;
    Eigen::VectorXd noise_std;
    Eigen::VectorXd bias;
    Eigen::VectorXd x0;
    Eigen::VectorXd test_x0;
    double test_duration = 8.0;
    dfc::PiConfig pi;
    std::string initial_gain_mode;                 // "nominal-k1" | "detuned-design"
    std::optional<Eigen::MatrixXd> initial_gain;   // explicit matrix wins
    bool saturation_enabled = false;
    double saturation_limit = 4.0;
    bool include_cross_forces = true;
    dfc::DmdcConfig dmdc;
    std::vector<std::uint64_t> identify_seeds;
    std::uint64_t seed = 1;
    json resolved;

    dfc::OperatingPoint op() const { return dfc::make_operating_point(params, y10, y20); }

    dfc::CostWeights weights() const { return dfc::CostWeights{Q, R}; }

    bool filtered() const { return derivative_mode == "filtered"; }

    bool nonlinear() const { return plant == "nonlinear"; }

    dfc::StateSpaceModel design_model() const {
        if (plant == "reference-linear") return dfc::nominal_reference_model();
        if (plant == "nominal-linear") return dfc::linearize(params, op());
        if (plant == "nonlinear")
            return dfc::dynamics_jacobian(params, op(), include_cross_forces);
        throw dfc::UsageError("unknown plant selection: " + plant);
    }

    dfc::NonlinearMaglevPlant nonlinear_plant() const {
        return dfc::NonlinearMaglevPlant{params, op(), include_cross_forces, saturation_enabled,
                                         saturation_limit};
    }
};

Eigen::VectorXd vector_from_array(const json& j, int expected, const char* what) {
    if (!j.is_array() || static_cast<int>(j.size()) != expected)
        throw dfc::UsageError(std::string("config field ") + what + " must be an array of " +
                              std::to_string(expected) + " numbers");
    Eigen::VectorXd v(expected);
    for (int i = 0; i < expected; ++i) v(i) = j.at(i).get<double>();
    return v;
}

Config parse_config(const json& j) {
    Config c;
    c.resolved = j;
    c.plant = j.at("plant").get<std::string>();
    if (c.plant != "reference-linear" && c.plant != "nominal-linear" && c.plant != "nonlinear")
        throw dfc::UsageError("plant must be reference-linear, nominal-linear, or nonlinear");
    c.params = dfc::maglev_params_from_json(j.at("maglev"));
    c.y10 = j.at("maglev").value("y10", 0.01);
    c.y20 = j.at("maglev").value("y20", -0.02);
    c.Q = dfc::matrix_from_json(j.at("weights").at("Q"));
    c.R = dfc::matrix_from_json(j.at("weights").at("R"));
    c.ts = j.at("ts").get<double>();
    if (!(c.ts > 0.0)) throw dfc::UsageError("ts must be positive");
    c.duration = j.at("duration").get<double>();
    const json& e = j.at("excitation");
    c.excitation.amplitude = e.at("amplitude").get<double>();
    c.excitation.freq_low = e.at("freq_low").get<double>();
    c.excitation.freq_high = e.at("freq_high").get<double>();
    c.excitation.num_tones = e.at("num_tones").get<int>();
    c.derivative_mode = j.at("derivative_mode").get<std::string>();
    if (c.derivative_mode != "ideal" && c.derivative_mode != "filtered")
        throw dfc::UsageError("derivative_mode must be 'ideal' or 'filtered'");
    c.filter.order = j.at("filter").at("order").get<int>();
    c.filter.cutoff_hz = j.at("filter").at("cutoff_hz").get<double>();
    c.settle_discard = j.at("settle_discard").get<double>();
    c.noise_std = vector_from_array(j.at("noise_std"), 4, "noise_std");
    c.bias = vector_from_array(j.at("bias"), 4, "bias");
    c.x0 = vector_from_array(j.at("x0"), 4, "x0");
    c.test_x0 = vector_from_array(j.at("test_x0"), 4, "test_x0");
    c.test_duration = j.at("test_duration").get<double>();
    const json& pi = j.at("pi");
    c.pi.window = pi.at("window").get<double>();
    c.pi.eta_bar = pi.at("eta_bar").get<double>();
    c.pi.zeta_bar = pi.at("zeta_bar").get<double>();
    c.pi.max_inner_iters = pi.at("max_inner_iters").get<int>();
    c.pi.max_epochs = pi.at("max_epochs").get<int>();
    c.pi.min_epochs = pi.at("min_epochs").get<int>();
    c.pi.ridge = pi.at("ridge").get<double>();
    c.pi.require_inner_convergence = pi.at("require_inner_convergence").get<bool>();
    const json& ig = j.at("initial_gain");
    if (ig.is_string()) {
        c.initial_gain_mode = ig.get<std::string>();
        if (c.initial_gain_mode != "nominal-k1" && c.initial_gain_mode != "detuned-design")
            throw dfc::UsageError(
                "initial_gain must be 'nominal-k1', 'detuned-design', or a gain matrix");
    } else {
        c.initial_gain = dfc::matrix_from_json(ig);
    }
    c.saturation_enabled = j.at("saturation").at("enabled").get<bool>();
    c.saturation_limit = j.at("saturation").at("limit").get<double>();
    c.include_cross_forces = j.at("include_cross_forces").get<bool>();
    c.dmdc.e_min = j.at("dmdc").at("e_min").get<double>();
    c.dmdc.q_override = j.at("dmdc").at("q_override").get<int>();
    for (const auto& s : j.at("identify_seeds")) c.identify_seeds.push_back(s.get<std::uint64_t>());
    c.seed = j.at("seed").get<std::uint64_t>();
    return c;
}

struct CliOptions {
    std::string preset = "ideal-sim";
    std::string config_file;
    std::string out_dir;
    std::optional<std::uint64_t> seed;
};

Config resolve_config(const CliOptions& opt) {
    json j = preset_by_name(opt.preset);
    if (!opt.config_file.empty()) merge_into(j, dfc::load_json(opt.config_file));
    if (opt.seed) j["seed"] = *opt.seed;
    return parse_config(j);
}

// ---------------------------------------------------------------------------
// Output helpers
// ---------------------------------------------------------------------------

class RunOutput {
  public:
    RunOutput(const std::string& command, const Config& cfg, const std::string& out_dir)
        : dir_(out_dir), start_(std::chrono::steady_clock::now()) {
        if (out_dir.empty()) throw dfc::UsageError("--out directory is required");
        fs::create_directories(dir_);
        dfc::save_json(dir_ / "config.json", cfg.resolved);
        manifest_["command"] = command;
        manifest_["tool_version"] = kToolVersion;
        manifest_["versions"] = {
            {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." +
                          std::to_string(EIGEN_MAJOR_VERSION) + "." +
                          std::to_string(EIGEN_MINOR_VERSION)},
            {"json", std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." +
                         std::to_string(NLOHMANN_JSON_VERSION_MINOR) + "." +
                         std::to_string(NLOHMANN_JSON_VERSION_PATCH)},
            {"cli11", CLI11_VERSION}};
        char hash[32];
        std::snprintf(hash, sizeof hash, "0x%016llx",
                      static_cast<unsigned long long>(dfc::fnv1a(cfg.resolved.dump(2))));
        manifest_["config_hash"] = hash;
        manifest_["seed"] = cfg.seed;
        flush();  // manifest exists even if the run aborts
    }

    const fs::path& dir() const { return dir_; }

    void note_output(const std::string& name) { outputs_.push_back(name); }

    void add(const std::string& key, const json& value) { manifest_[key] = value; }

    void finish() {
        const auto elapsed = std::chrono::steady_clock::now() - start_;
        manifest_["elapsed_ms"] =
            std::chrono::duration_cast<std::chrono::milliseconds>(elapsed).count();
        flush();
    }

  private:
    void flush() {
        manifest_["outputs"] = outputs_;
        dfc::save_json(dir_ / "manifest.json", manifest_);
    }

    fs::path dir_;
    json manifest_;
    std::vector<std::string> outputs_;
    std::chrono::steady_clock::time_point start_;
};

json gain_to_json(const dfc::Gain& g) { return dfc::matrix_to_json(g.K); }

json eigenvalues_to_json(const Eigen::MatrixXd& M) {
    Eigen::EigenSolver<Eigen::MatrixXd> eig(M, /*computeEigenvectors=*/false);
    json out = json::array();
    for (int i = 0; i < M.rows(); ++i)
        out.push_back({eig.eigenvalues()(i).real(), eig.eigenvalues()(i).imag()});
    return out;
}

// Shared closed-loop run used by train (test phase), compare, and simulate.
dfc::Trajectory run_closed_loop(const Config& cfg, const dfc::Gain& gain, bool state_feedback,
                                const dfc::Multisine* excitation,
                                const dfc::SensingOptions& sensing, const Eigen::VectorXd& x0,
                                double duration) {
    if (cfg.nonlinear()) {
        const auto plant = cfg.nonlinear_plant();
        return state_feedback
                   ? simulate_sf_closed_loop(plant, gain, excitation, sensing, x0, cfg.ts, duration)
                   : simulate_dfc_closed_loop(plant, gain, excitation, sensing, x0, cfg.ts,
                                              duration);
    }
    const auto model = cfg.design_model();
    return state_feedback
               ? simulate_sf_closed_loop(model, gain, excitation, sensing, x0, cfg.ts, duration)
               : simulate_dfc_closed_loop(model, gain, excitation, sensing, x0, cfg.ts, duration);
}

dfc::SensingOptions learning_sensing(const Config& cfg, std::uint64_t noise_seed) {
    dfc::SensingOptions s;
    if (cfg.bias.norm() > 0.0) s.bias = cfg.bias;
    if (cfg.noise_std.norm() > 0.0) {
        s.noise_std = cfg.noise_std;
        s.noise_seed = noise_seed;
    }
    // The filtered-derivative path is applied by consistent_filter afterwards,
    // so the raw run keeps the exact derivative record.
    return s;
}

dfc::Gain resolve_initial_gain(const Config& cfg) {
    if (cfg.initial_gain) return dfc::Gain{*cfg.initial_gain};
    if (cfg.initial_gain_mode == "nominal-k1") return dfc::nominal_initial_gain();
    // Detuned model-based design: half the Riccati-optimal gain of the design
    // model -- admissible but clearly suboptimal, a realistic starting point.
    const dfc::DfcSolution sol = dfc::solve_dfc_are(cfg.design_model(), cfg.weights());
    return dfc::Gain{0.5 * sol.K.K};
}

std::string sanitize_label(const std::string& label) {
    std::string out;
    for (char ch : label)
        out.push_back(std::isalnum(static_cast<unsigned char>(ch)) ? ch : '-');
    return out.empty() ? std::string("gain") : out;
}

// ---------------------------------------------------------------------------
// Subcommands
// ---------------------------------------------------------------------------

int run_design(const CliOptions& opt, const std::string& model_file) {
    const Config cfg = resolve_config(opt);
    RunOutput out("design", cfg, opt.out_dir);

    std::optional<dfc::StateSpaceModel> model;
    if (!model_file.empty()) {
        const json mj = dfc::load_json(model_file);
        model.emplace(dfc::matrix_from_json(mj.at("A")), dfc::matrix_from_json(mj.at("B")));
        out.add("model_file", model_file);
    } else {
        model.emplace(cfg.design_model());
    }

    const dfc::DfcSolution sol = dfc::solve_dfc_are(*model, cfg.weights());
    json sj;
    sj["P"] = dfc::matrix_to_json(sol.P);
    sj["K"] = gain_to_json(sol.K);
    sj["iterations"] = sol.iterations;
    sj["residual"] = sol.residual;
    sj["closed_loop_eigenvalues"] =
        eigenvalues_to_json(dfc::closed_loop_matrix(*model, sol.K));
    dfc::save_json(out.dir() / "solution.json", sj);
    out.note_output("solution.json");
    out.finish();
    std::cout << "design: converged in " << sol.iterations << " iterations, residual "
              << sol.residual << "\n";
    return 0;
}

int run_train(const CliOptions& opt) {
    const Config cfg = resolve_config(opt);
    cfg.pi.validate();
    if (cfg.duration < cfg.ts) throw dfc::UsageError("training duration must cover at least one step");
    RunOutput out("train", cfg, opt.out_dir);

    const dfc::Gain K0 = resolve_initial_gain(cfg);
    const dfc::CostWeights weights = cfg.weights();

    // Plot-data files grow incrementally so partial runs stay inspectable.
    std::ofstream conv(out.dir() / "convergence.csv");
    conv << "epoch,cost,delta_v,inner_iterations,condition_number\n";
    std::ofstream inner_csv(out.dir() / "inner_iterations.csv");
    inner_csv << "epoch,iteration,delta_p,delta_k\n";
    out.note_output("convergence.csv");
    out.note_output("inner_iterations.csv");

    int epoch_counter = 0;
    dfc::TrainingEnv env;
    env.collect = [&](const dfc::Gain& K) {
        ++epoch_counter;
        const dfc::Multisine excitation(
            [&] {
                dfc::ExcitationSpec e = cfg.excitation;
                e.seed = cfg.seed * 1000 + static_cast<std::uint64_t>(epoch_counter);
                return e;
            }(),
            2, cfg.duration, cfg.ts);
        const dfc::SensingOptions sensing =
            learning_sensing(cfg, cfg.seed * 1000 + 500 + static_cast<std::uint64_t>(epoch_counter));
        dfc::Trajectory traj =
            run_closed_loop(cfg, K, false, &excitation, sensing, cfg.x0, cfg.duration);
        if (cfg.filtered()) traj = dfc::consistent_filter(traj, cfg.filter, cfg.settle_discard);
        char name[64];
        std::snprintf(name, sizeof name, "epoch_%03d_learning.csv", epoch_counter);
        traj.save_csv(out.dir() / name);
        out.note_output(name);
        return traj;
    };
    env.evaluate = [&](const dfc::Gain& K) {
        dfc::Trajectory test = run_closed_loop(cfg, K, false, nullptr, dfc::SensingOptions{},
                                               cfg.test_x0, cfg.test_duration);
        char name[64];
        std::snprintf(name, sizeof name, "epoch_%03d_test.csv", epoch_counter);
        test.save_csv(out.dir() / name);
        out.note_output(name);
        return dfc::evaluate_policy_cost(test, weights).cost;
    };
    env.on_epoch = [&](const dfc::EpochRecord& rec) {
        json ej;
        ej["epoch"] = rec.epoch;
        ej["gain_in"] = gain_to_json(rec.gain_in);
        ej["gain_out"] = gain_to_json(rec.gain_out);
        ej["cost"] = rec.cost;
        ej["delta_v"] = rec.delta_v;
        ej["inner_iterations"] = rec.inner_iterations;
        ej["inner_converged"] = rec.inner_converged;
        ej["condition_number"] = rec.condition_number;
        char name[64];
        std::snprintf(name, sizeof name, "epoch_%03d.json", rec.epoch);
        dfc::save_json(out.dir() / name, ej);
        out.note_output(name);
        conv << rec.epoch << ',' << rec.cost << ',' << rec.delta_v << ','
             << rec.inner_iterations << ',' << rec.condition_number << '\n';
        conv.flush();
        for (std::size_t i = 0; i < rec.inner_dp.size(); ++i)
            inner_csv << rec.epoch << ',' << (i + 1) << ',' << rec.inner_dp[i] << ','
                      << rec.inner_dk[i] << '\n';
        inner_csv.flush();
    };

    const dfc::TrainingResult res = dfc::multi_epoch_train(K0, weights, cfg.pi, env);

    json tj;
    tj["initial_gain"] = gain_to_json(K0);
    tj["final_gain"] = gain_to_json(res.K_final);
    tj["final_cost"] = res.final_cost;
    tj["stopped_by_tolerance"] = res.stopped_by_tolerance;
    tj["epochs"] = json::array();
    for (const auto& rec : res.epochs)
        tj["epochs"].push_back({{"epoch", rec.epoch},
                                {"cost", rec.cost},
                                {"delta_v", rec.delta_v},
                                {"inner_iterations", rec.inner_iterations}});
    dfc::save_json(out.dir() / "training.json", tj);
    out.note_output("training.json");
    out.add("epochs_run", static_cast<int>(res.epochs.size()));
    out.finish();
    std::cout << "train: " << res.epochs.size() << " epochs, final cost " << res.final_cost
              << (res.stopped_by_tolerance ? " (stopped by tolerance)" : "") << "\n";
    return 0;
}

int run_identify(const CliOptions& opt) {
    const Config cfg = resolve_config(opt);
    if (!(cfg.duration > 0.0))
        throw dfc::UsageError("identification requires a positive excitation duration");
    if (cfg.identify_seeds.empty())
        throw dfc::UsageError("identify_seeds must list at least one seed");
    if (!(cfg.excitation.amplitude > 0.0))
        throw dfc::ExcitationError(
            "insufficient excitation: identification needs a nonzero excitation amplitude");
    RunOutput out("identify", cfg, opt.out_dir);

    const dfc::Gain zero{Eigen::MatrixXd::Zero(2, 4)};
    const dfc::StateSpaceModel design = cfg.design_model();

    // Shared frequency grid for response overlays.
    std::vector<double> omegas;
    for (double w = 0.5; w <= 100.0 + 1e-9; w += 0.5) omegas.push_back(w);
    const auto write_response = [&](const dfc::StateSpaceModel& mdl, const std::string& name) {
        const auto m11 = dfc::frequency_response(mdl, 0, 0, omegas);
        const auto m22 = dfc::frequency_response(mdl, 1, 1, omegas);
        std::ofstream f(out.dir() / name);
        f << "omega,mag_y1_u1,mag_y2_u2\n";
        for (std::size_t i = 0; i < omegas.size(); ++i)
            f << omegas[i] << ',' << m11[i] << ',' << m22[i] << '\n';
        out.note_output(name);
    };
    write_response(design, "freq_response_design.csv");

    json seeds_used = json::array();
    for (std::size_t idx = 0; idx < cfg.identify_seeds.size(); ++idx) {
        const std::uint64_t s = cfg.identify_seeds[idx];
        seeds_used.push_back(s);
        dfc::ExcitationSpec espec = cfg.excitation;
        espec.seed = s;
        const dfc::Multisine excitation(espec, 2, cfg.duration, cfg.ts);
        dfc::SensingOptions sensing = learning_sensing(cfg, s + 7777);
        if (cfg.filtered()) sensing.filter = cfg.filter;
        // Open-loop collection: zero gain, the excitation is the input.
        dfc::Trajectory traj =
            run_closed_loop(cfg, zero, false, &excitation, sensing, cfg.x0, cfg.duration);

        char csv_name[64];
        std::snprintf(csv_name, sizeof csv_name, "identify_%zu_data.csv", idx + 1);
        traj.save_csv(out.dir() / csv_name);
        out.note_output(csv_name);

        const dfc::IdentifiedModel dm = dfc::dmdc_fit(traj, cfg.dmdc);
        const dfc::PemResult pem = dfc::pem_refine(traj, dm.model);

        json mj;
        mj["seed"] = s;
        mj["A"] = dfc::matrix_to_json(pem.model.A);
        mj["B"] = dfc::matrix_to_json(pem.model.B);
        mj["dmdc"] = {{"A", dfc::matrix_to_json(dm.model.A)},
                      {"B", dfc::matrix_to_json(dm.model.B)},
                      {"fit_residual", dm.fit_residual},
                      {"singular_values", dfc::vector_to_json(dm.singular_values)},
                      {"q_used", dm.q_used}};
        mj["pem"] = {{"j_initial", pem.j_initial},
                     {"j_final", pem.j_final},
                     {"iterations", pem.iterations},
                     {"gradient_norm", pem.gradient_norm},
                     {"improved", pem.improved}};
        char mj_name[64];
        std::snprintf(mj_name, sizeof mj_name, "model_%zu.json", idx + 1);
        dfc::save_json(out.dir() / mj_name, mj);
        out.note_output(mj_name);

        char fr_name[64];
        std::snprintf(fr_name, sizeof fr_name, "freq_response_%zu.csv", idx + 1);
        write_response(pem.model, fr_name);
    }
    out.add("identify_seeds", seeds_used);
    out.finish();
    std::cout << "identify: " << cfg.identify_seeds.size() << " model(s) written\n";
    return 0;
}

struct GainSpec {
    std::string label;
    std::string type;  // "derivative-feedback" | "state-feedback"
    dfc::Gain gain;
};

GainSpec load_gain_file(const std::string& file) {
    const json j = dfc::load_json(file);
    GainSpec g{fs::path(file).stem().string(), "derivative-feedback",
               dfc::Gain{dfc::matrix_from_json(j.at("K"))}};
    if (j.contains("label")) g.label = j.at("label").get<std::string>();
    if (j.contains("type")) g.type = j.at("type").get<std::string>();
    if (g.type != "derivative-feedback" && g.type != "state-feedback")
        throw dfc::UsageError("gain type must be derivative-feedback or state-feedback: " + file);
    return g;
}

int run_compare(const CliOptions& opt, const std::vector<std::string>& gain_files,
                bool with_baseline) {
    const Config cfg = resolve_config(opt);
    if (gain_files.empty() && !with_baseline)
        throw dfc::UsageError("compare needs at least one --gain file (or the baseline)");
    RunOutput out("compare", cfg, opt.out_dir);

    const dfc::StateSpaceModel design = cfg.design_model();
    std::vector<GainSpec> gains;
    for (const auto& f : gain_files) gains.push_back(load_gain_file(f));
    if (with_baseline) {
        const dfc::DfcSolution lqr = dfc::solve_state_feedback_are(design, cfg.weights());
        gains.push_back(GainSpec{"state-feedback-lqr", "state-feedback", lqr.K});
    }
    for (const auto& g : gains)
        if (g.gain.K.rows() != design.m() || g.gain.K.cols() != design.n())
            throw dfc::UsageError("gain dimensions do not match the plant: " + g.label);

    const double tail_window = 0.5;  // seconds of the run tail used for steady-state metrics
    const double settle_threshold = 1e-3;

    json report;
    report["scenario"] = {{"plant", cfg.plant},
                          {"x0", dfc::vector_to_json(cfg.test_x0)},
                          {"duration", cfg.test_duration},
                          {"bias", dfc::vector_to_json(cfg.bias)},
                          {"settle_threshold", settle_threshold},
                          {"tail_window", tail_window}};
    report["controllers"] = json::array();

    for (const auto& g : gains) {
        dfc::SensingOptions sensing = learning_sensing(cfg, cfg.seed + 31);
        if (cfg.filtered()) sensing.filter = cfg.filter;
        const bool sf = g.type == "state-feedback";
        const dfc::Trajectory traj =
            run_closed_loop(cfg, g.gain, sf, nullptr, sensing, cfg.test_x0, cfg.test_duration);

        const std::string csv_name = "compare_" + sanitize_label(g.label) + ".csv";
        traj.save_csv(out.dir() / csv_name);
        out.note_output(csv_name);

        const int N = traj.samples();
        const int tail_start = std::max(0, N - static_cast<int>(tail_window / cfg.ts));
        const double final_offset =
            traj.x.bottomRows(N - tail_start).cwiseAbs().maxCoeff();
        const double terminal_input = traj.u.bottomRows(N - tail_start).cwiseAbs().maxCoeff();
        const double peak_input = traj.u.cwiseAbs().maxCoeff();
        double settling_time = -1.0;
        for (int k = 0; k < N; ++k) {
            if (traj.x.row(k).cwiseAbs().maxCoeff() < settle_threshold) {
                bool stays = true;
                for (int r = k; r < N; ++r)
                    if (traj.x.row(r).cwiseAbs().maxCoeff() >= settle_threshold) {
                        stays = false;
                        break;
                    }
                if (stays) {
                    settling_time = traj.t(k) - traj.t(0);
                    break;
                }
            }
        }
        const Eigen::MatrixXd cl =
            sf ? Eigen::MatrixXd(design.A - design.B * g.gain.K)
               : dfc::closed_loop_matrix(design, g.gain);
        const double margin = -dfc::max_real_eigenvalue(cl);
        const dfc::CostEvaluation cost = dfc::evaluate_policy_cost(traj, cfg.weights());

        json cj;
        cj["label"] = g.label;
        cj["type"] = g.type;
        cj["K"] = gain_to_json(g.gain);
        cj["cost"] = cost.cost;
        cj["cost_tail_warning"] = cost.tail_warning;
        cj["settling_time"] = settling_time >= 0.0 ? json(settling_time) : json(nullptr);
        cj["final_offset"] = final_offset;
        cj["terminal_input"] = terminal_input;
        cj["peak_input"] = peak_input;
        cj["hurwitz_margin"] = margin;
        cj["trajectory"] = csv_name;
        report["controllers"].push_back(cj);
    }
    dfc::save_json(out.dir() / "comparison.json", report);
    out.note_output("comparison.json");
    out.finish();
    std::cout << "compare: " << gains.size() << " controller(s) evaluated\n";
    return 0;
}

int run_simulate(const CliOptions& opt, const std::string& gain_file) {
    const Config cfg = resolve_config(opt);
    RunOutput out("simulate", cfg, opt.out_dir);

    GainSpec g{"open-loop", "derivative-feedback", dfc::Gain{Eigen::MatrixXd::Zero(2, 4)}};
    if (!gain_file.empty()) g = load_gain_file(gain_file);

    std::optional<dfc::Multisine> excitation;
    if (cfg.excitation.amplitude > 0.0) {
        dfc::ExcitationSpec espec = cfg.excitation;
        espec.seed = cfg.seed;
        excitation.emplace(espec, 2, cfg.duration, cfg.ts);
    }
    dfc::SensingOptions sensing = learning_sensing(cfg, cfg.seed + 999);
    if (cfg.filtered()) sensing.filter = cfg.filter;
    const dfc::Trajectory traj =
        run_closed_loop(cfg, g.gain, g.type == "state-feedback",
                        excitation ? &*excitation : nullptr, sensing, cfg.x0, cfg.duration);
    traj.save_csv(out.dir() / "trajectory.csv");
    out.note_output("trajectory.csv");
    out.finish();
    std::cout << "simulate: " << traj.samples() << " samples written\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"derivative-feedback control workbench"};
    app.require_subcommand(1);

    CliOptions opt;
    std::string model_file, gain_file;
    std::vector<std::string> gain_files;
    bool no_baseline = false;

    const auto add_common = [&](CLI::App* cmd) {
        cmd->add_option("--preset", opt.preset,
                        "configuration preset: ideal-sim, hardware-like, identification")
            ->default_val("ideal-sim");
        cmd->add_option("--config", opt.config_file, "JSON config overlay file");
        cmd->add_option("--seed", opt.seed, "override the global seed");
        cmd->add_option("--out", opt.out_dir, "output directory")->required();
    };

    CLI::App* design = app.add_subcommand("design", "model-based derivative-feedback design");
    add_common(design);
    design->add_option("--model", model_file, "design on an identified model file");

    CLI::App* train = app.add_subcommand("train", "model-free multi-epoch policy iteration");
    add_common(train);

    CLI::App* identify = app.add_subcommand("identify", "data-driven model identification");
    add_common(identify);

    CLI::App* compare = app.add_subcommand("compare", "evaluate controllers on a shared scenario");
    add_common(compare);
    compare->add_option("--gain", gain_files, "gain file (repeatable)");
    compare->add_flag("--no-baseline", no_baseline,
                      "skip the state-feedback Riccati baseline controller");

    CLI::App* simulate = app.add_subcommand("simulate", "run one excited/closed-loop trajectory");
    add_common(simulate);
    simulate->add_option("--gain", gain_file, "controller gain file");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (design->parsed()) return run_design(opt, model_file);
        if (train->parsed()) return run_train(opt);
        if (identify->parsed()) return run_identify(opt);
        if (compare->parsed()) return run_compare(opt, gain_files, !no_baseline);
        if (simulate->parsed()) return run_simulate(opt, gain_file);
        std::cerr << "no subcommand selected\n";
        return 2;
    } catch (const dfc::UsageError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 2;
    } catch (const dfc::ExcitationError& e) {
        std::cerr << "excitation error: " << e.what() << "\n";
        return 4;
    } catch (const dfc::NumericalError& e) {
        std::cerr << "numerical error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
