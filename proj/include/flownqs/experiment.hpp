// Copyright 2026 The flownqs Authors
// SPDX-License-Identifier: Apache-2.0

/**
 * @file experiment.hpp
 * @brief Config-driven experiment harness: JSON configs with strict key
 *        checking, result records, history CSV, and the merged report table.
 */

#pragma once

#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "flownqs/checkpoint.hpp"
#include "flownqs/exact_diag.hpp"
#include "flownqs/trainer.hpp"

#ifndef FLOWNQS_VERSION
#define FLOWNQS_VERSION "0.0.0"
#endif
#ifndef FLOWNQS_GIT_REV
#define FLOWNQS_GIT_REV "unknown"
#endif

namespace flownqs {

inline std::string version_stamp() {
    return std::string(FLOWNQS_VERSION) + "+" + FLOWNQS_GIT_REV;
}

/// Shortest round-trip decimal form of a double; keeps emitted tables and
/// CSV logs bit-faithful and reproducible.
inline std::string fmt_double(double x) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", x);
    return buf;
}

namespace cfg_detail {

inline void check_keys(const nlohmann::json& j, const std::set<std::string>& allowed,
                       const std::string& context) {
    if (!j.is_object()) throw std::invalid_argument("config: '" + context + "' must be an object");
    for (auto it = j.begin(); it != j.end(); ++it)
        if (!allowed.count(it.key()))
            throw std::invalid_argument("config: unknown key '" + it.key() + "' in " + context);
}

template <class T>
T get_or(const nlohmann::json& j, const std::string& key, T fallback) {
    auto it = j.find(key);
    return it == j.end() ? fallback : it->get<T>();
}

}  // namespace cfg_detail

/// Full experiment description. Absent blocks and fields take the reference
/// defaults; unknown keys are rejected.
struct ExperimentConfig {
    int n = 10;
    int l = 1;
    double v = 1.0;
    TrainConfig train;
    InferConfig infer;
    ModelConfig model;
    std::uint64_t seed = 1;
    std::string out_dir = "runs/default";
    int threads = 0;

    static ExperimentConfig from_json(const nlohmann::json& j) {
        cfg_detail::check_keys(
            j, {"problem", "train", "infer", "model", "seed", "out", "threads"}, "config");
        ExperimentConfig c;
        if (!j.contains("problem"))
            throw std::invalid_argument("config: missing required 'problem' block");
        const auto& p = j.at("problem");
        cfg_detail::check_keys(p, {"n", "l", "v"}, "problem");
        c.n = p.at("n").get<int>();
        c.l = p.at("l").get<int>();
        c.v = p.at("v").get<double>();

        c.seed = cfg_detail::get_or<std::uint64_t>(j, "seed", 1);
        c.out_dir = cfg_detail::get_or<std::string>(j, "out", "runs/default");
        c.threads = cfg_detail::get_or<int>(j, "threads", 0);

        const nlohmann::json t = j.contains("train") ? j.at("train") : nlohmann::json::object();
        cfg_detail::check_keys(t,
                               {"subspace_size", "batch_subspaces", "n_mc", "flow_lr", "nqs_lr",
                                "uniqueness_threshold", "max_updates", "regions_per_chunk"},
                               "train");
        c.train.n = c.n;
        c.train.l = c.l;
        c.train.v = c.v;
        // |S| defaults to 150 at n = 10 and 5000 for larger systems.
        std::size_t default_s = (c.n == 10) ? 150 : 5000;
        c.train.subspace_size = cfg_detail::get_or<std::size_t>(t, "subspace_size", default_s);
        c.train.batch_subspaces = cfg_detail::get_or<std::size_t>(t, "batch_subspaces", 30);
        c.train.n_mc = cfg_detail::get_or<int>(t, "n_mc", 25);
        c.train.flow_lr = cfg_detail::get_or<double>(t, "flow_lr", 1e-4);
        c.train.nqs_lr = cfg_detail::get_or<double>(t, "nqs_lr", 1e-4);
        c.train.uniqueness_threshold =
            cfg_detail::get_or<double>(t, "uniqueness_threshold", 0.9);
        c.train.max_updates = cfg_detail::get_or<int>(t, "max_updates", 5000);
        c.train.regions_per_chunk =
            cfg_detail::get_or<std::size_t>(t, "regions_per_chunk", 0);
        c.train.seed = c.seed;
        c.train.threads = c.threads;

        const nlohmann::json i = j.contains("infer") ? j.at("infer") : nlohmann::json::object();
        cfg_detail::check_keys(
            i, {"iterations", "nqs_lr", "plateau_factor", "plateau_patience", "n_repeats"},
            "infer");
        c.infer.iterations = cfg_detail::get_or<int>(i, "iterations", 2000);
        c.infer.nqs_lr = cfg_detail::get_or<double>(i, "nqs_lr", 1e-3);
        c.infer.plateau_factor = cfg_detail::get_or<double>(i, "plateau_factor", 0.5);
        c.infer.plateau_patience = cfg_detail::get_or<int>(i, "plateau_patience", 20);
        c.infer.n_repeats = cfg_detail::get_or<int>(i, "n_repeats", 20);
        c.infer.threads = c.threads;

        const nlohmann::json m = j.contains("model") ? j.at("model") : nlohmann::json::object();
        cfg_detail::check_keys(m,
                               {"flow_coupling_layers", "flow_hidden_width", "flow_hidden_layers",
                                "nqs_hidden_width", "nqs_hidden_layers"},
                               "model");
        c.model.flow_coupling_layers = cfg_detail::get_or<int>(m, "flow_coupling_layers", 4);
        c.model.flow_hidden_width = cfg_detail::get_or<std::size_t>(m, "flow_hidden_width", 512);
        c.model.flow_hidden_layers = cfg_detail::get_or<std::size_t>(m, "flow_hidden_layers", 2);
        c.model.nqs_hidden_width = cfg_detail::get_or<std::size_t>(m, "nqs_hidden_width", 512);
        c.model.nqs_hidden_layers = cfg_detail::get_or<std::size_t>(m, "nqs_hidden_layers", 4);
        return c;
    }

    static ExperimentConfig from_file(const std::filesystem::path& path) {
        std::ifstream f(path);
        if (!f) throw std::runtime_error("config: cannot open " + path.string());
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(f);
        } catch (const nlohmann::json::parse_error& e) {
            throw std::runtime_error("config: " + path.string() + ": " + e.what());
        }
        return from_json(j);
    }

    /// Fully resolved config (defaults expanded) for record provenance.
    nlohmann::json to_json() const {
        return {
            {"problem", {{"n", n}, {"l", l}, {"v", v}}},
            {"train",
             {{"subspace_size", train.subspace_size},
              {"batch_subspaces", train.batch_subspaces},
              {"n_mc", train.n_mc},
              {"flow_lr", train.flow_lr},
              {"nqs_lr", train.nqs_lr},
              {"uniqueness_threshold", train.uniqueness_threshold},
              {"max_updates", train.max_updates},
              {"regions_per_chunk", train.regions_per_chunk}}},
            {"infer",
             {{"iterations", infer.iterations},
              {"nqs_lr", infer.nqs_lr},
              {"plateau_factor", infer.plateau_factor},
              {"plateau_patience", infer.plateau_patience},
              {"n_repeats", infer.n_repeats}}},
            {"model",
             {{"flow_coupling_layers", model.flow_coupling_layers},
              {"flow_hidden_width", model.flow_hidden_width},
              {"flow_hidden_layers", model.flow_hidden_layers},
              {"nqs_hidden_width", model.nqs_hidden_width},
              {"nqs_hidden_layers", model.nqs_hidden_layers}}},
            {"seed", seed},
            {"out", out_dir},
            {"threads", threads},
        };
    }
};

/// One experiment outcome; percent_error is present exactly when e_true is.
struct ResultRecord {
    int n = 0;
    int l = 0;
    double v = 1.0;
    std::string method;
    double energy_mean = 0.0;
    double energy_std = 0.0;
    std::optional<double> e_true;
    std::optional<double> percent_error;
    double wall_time_s = 0.0;
    std::uint64_t seed = 0;
    std::string version;
    nlohmann::json config;

    nlohmann::json to_json() const {
        nlohmann::json j = {{"n", n},
                            {"l", l},
                            {"v", v},
                            {"method", method},
                            {"energy_mean", energy_mean},
                            {"energy_std", energy_std},
                            {"wall_time_s", wall_time_s},
                            {"seed", seed},
                            {"version", version},
                            {"config", config}};
        if (e_true) {
            j["e_true"] = *e_true;
            j["percent_error"] = percent_error ? *percent_error
                                               : percentage_error(energy_mean, *e_true);
        }
        return j;
    }

    static ResultRecord from_json(const nlohmann::json& j) {
        ResultRecord r;
        r.n = j.at("n").get<int>();
        r.l = j.at("l").get<int>();
        r.v = j.at("v").get<double>();
        r.method = j.at("method").get<std::string>();
        r.energy_mean = j.at("energy_mean").get<double>();
        r.energy_std = j.at("energy_std").get<double>();
        if (j.contains("e_true")) {
            r.e_true = j.at("e_true").get<double>();
            r.percent_error = j.at("percent_error").get<double>();
        }
        r.wall_time_s = j.value("wall_time_s", 0.0);
        r.seed = j.value("seed", std::uint64_t(0));
        r.version = j.value("version", "");
        if (j.contains("config")) r.config = j.at("config");
        return r;
    }
};

namespace exp_detail {

inline std::string problem_tag(int n, int l, double v, std::uint64_t seed) {
    std::ostringstream os;
    os << "n" << n << "_l" << l << "_v" << v << "_seed" << seed;
    return os.str();
}

inline std::filesystem::path write_record(const ResultRecord& rec,
                                          const std::filesystem::path& out_dir) {
    std::filesystem::create_directories(out_dir);
    std::filesystem::path path =
        out_dir / (rec.method + "_" + problem_tag(rec.n, rec.l, rec.v, rec.seed) + ".json");
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot write " + path.string());
    f << rec.to_json().dump(2) << "\n";
    return path;
}

inline double elapsed_s(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace exp_detail

/// Exact ground-state record: dense path for n <= 14, Lanczos up to n = 20.
inline ResultRecord run_ed(const ExperimentConfig& cfg) {
    if (cfg.n > 20)
        throw std::invalid_argument("ed: n = " + std::to_string(cfg.n) +
                                    " exceeds the exact-diagonalization limit of 20");
    auto t0 = std::chrono::steady_clock::now();
    InteractionGraph g = build_ring_graph(cfg.n, cfg.l, cfg.v);
    GroundStateResult gs;
    ResultRecord rec;
    if (cfg.n <= 14) {
        gs = dense_ground_state(g);
        rec.method = "ed-dense";
    } else {
        gs = lanczos_ground_state(g, 1e-10, 500, cfg.seed);
        rec.method = "ed-lanczos";
    }
    rec.n = cfg.n;
    rec.l = cfg.l;
    rec.v = cfg.v;
    rec.energy_mean = gs.energy;
    rec.energy_std = 0.0;
    rec.wall_time_s = exp_detail::elapsed_s(t0);
    rec.seed = cfg.seed;
    rec.version = version_stamp();
    rec.config = cfg.to_json();
    exp_detail::write_record(rec, cfg.out_dir);
    return rec;
}

inline void write_history_csv(const std::filesystem::path& path,
                              const std::vector<UpdateStats>& history) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot write " + path.string());
    f << "update,mean_energy,mean_unique_fraction,flow_loss\n";
    for (const UpdateStats& u : history)
        f << u.update << "," << fmt_double(u.mean_energy) << ","
          << fmt_double(u.mean_unique_fraction) << "," << fmt_double(u.flow_loss) << "\n";
}

struct TrainArtifacts {
    std::filesystem::path flow_checkpoint;  // stem (.json/.bin appended)
    std::filesystem::path nqs_checkpoint;
    std::filesystem::path history_csv;
    std::filesystem::path summary_json;
    bool converged = false;
    int updates_run = 0;
};

/// Trains and writes checkpoints, the per-update history CSV, and a summary.
/// Non-convergence at max_updates is flagged in the summary, not an error.
inline TrainArtifacts run_train(const ExperimentConfig& cfg) {
    auto t0 = std::chrono::steady_clock::now();
    TrainResult tr = train(cfg.train, cfg.model);

    std::filesystem::path out(cfg.out_dir);
    std::filesystem::create_directories(out);
    TrainArtifacts art;
    art.flow_checkpoint = out / "flow_checkpoint";
    art.nqs_checkpoint = out / "nqs_checkpoint";
    art.history_csv = out / "history.csv";
    art.summary_json = out / "train_summary.json";
    art.converged = tr.converged;
    art.updates_run = tr.updates_run;

    save_checkpoint(art.flow_checkpoint, tr.flow);
    save_checkpoint(art.nqs_checkpoint, tr.nqs);
    write_history_csv(art.history_csv, tr.history);

    nlohmann::json summary = {
        {"converged", tr.converged},
        {"updates_run", tr.updates_run},
        {"final_mean_energy", tr.history.empty() ? 0.0 : tr.history.back().mean_energy},
        {"final_mean_unique_fraction",
         tr.history.empty() ? 0.0 : tr.history.back().mean_unique_fraction},
        {"wall_time_s", exp_detail::elapsed_s(t0)},
        {"version", version_stamp()},
        {"config", cfg.to_json()},
    };
    std::ofstream sf(art.summary_json);
    if (!sf) throw std::runtime_error("cannot write " + art.summary_json.string());
    sf << summary.dump(2) << "\n";
    return art;
}

/// Looks for an exact-diagonalization record matching (n, l, v) in a results
/// directory; used to attach percent errors to inference records.
inline std::optional<double> find_e_true(const std::filesystem::path& dir, int n, int l,
                                         double v) {
    if (!std::filesystem::is_directory(dir)) return std::nullopt;
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
        if (entry.path().extension() != ".json") continue;
        if (entry.path().filename().string().rfind("ed-", 0) != 0) continue;
        std::ifstream f(entry.path());
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(f);
        } catch (...) {
            continue;
        }
        if (j.value("n", -1) == n && j.value("l", -1) == l && j.value("v", 0.0) == v)
            return j.at("energy_mean").get<double>();
    }
    return std::nullopt;
}

/// Inference from a flow checkpoint: mean +- std over n_repeats independent
/// subspace/NQS retrainings, joined with an ED record when one is available.
inline ResultRecord run_infer(const ExperimentConfig& cfg,
                              const std::filesystem::path& checkpoint_stem) {
    auto t0 = std::chrono::steady_clock::now();
    FlowModel flow = load_flow_checkpoint(checkpoint_stem);
    if (flow.n != cfg.n)
        throw std::invalid_argument("infer: checkpoint is for n = " + std::to_string(flow.n) +
                                    " but the config says n = " + std::to_string(cfg.n));
    InteractionGraph g = build_ring_graph(cfg.n, cfg.l, cfg.v);
    InferResult ir = infer(flow, g, cfg.train.subspace_size, cfg.infer, cfg.model, cfg.seed);

    ResultRecord rec;
    rec.n = cfg.n;
    rec.l = cfg.l;
    rec.v = cfg.v;
    rec.method = "nf-nqs";
    rec.energy_mean = ir.mean_energy;
    rec.energy_std = ir.std_energy;
    if (auto et = find_e_true(cfg.out_dir, cfg.n, cfg.l, cfg.v)) {
        rec.e_true = *et;
        rec.percent_error = percentage_error(ir.mean_energy, *et);
    }
    rec.wall_time_s = exp_detail::elapsed_s(t0);
    rec.seed = cfg.seed;
    rec.version = version_stamp();
    rec.config = cfg.to_json();
    exp_detail::write_record(rec, cfg.out_dir);
    return rec;
}

/// Merged CSV table over all record files in a directory: one row per
/// (n, l, v, method) record, stably sorted by (n, l, v). Wall time stays in
/// the JSON records so identical seeds reproduce identical tables.
inline std::string run_report(const std::filesystem::path& dir) {
    if (!std::filesystem::is_directory(dir))
        throw std::runtime_error("report: no such directory: " + dir.string());
    std::vector<std::pair<ResultRecord, std::string>> rows;  // record, filename
    std::vector<std::filesystem::path> files;
    for (const auto& entry : std::filesystem::directory_iterator(dir))
        if (entry.path().extension() == ".json" &&
            entry.path().filename().string() != "train_summary.json")
            files.push_back(entry.path());
    std::sort(files.begin(), files.end());
    for (const auto& path : files) {
        std::ifstream f(path);
        try {
            nlohmann::json j = nlohmann::json::parse(f);
            rows.emplace_back(ResultRecord::from_json(j), path.filename().string());
        } catch (const std::exception& e) {
            throw std::runtime_error("report: malformed record " + path.string() + ": " +
                                     e.what());
        }
    }
    if (rows.empty())
        throw std::runtime_error("report: no result records in " + dir.string());

    std::stable_sort(rows.begin(), rows.end(), [](const auto& a, const auto& b) {
        const ResultRecord &ra = a.first, &rb = b.first;
        if (ra.n != rb.n) return ra.n < rb.n;
        if (ra.l != rb.l) return ra.l < rb.l;
        return ra.v < rb.v;
    });

    // Rows sharing (n, l, v, seed) across files are kept but flagged.
    std::map<std::tuple<int, int, double, std::uint64_t>, int> seed_counts;
    for (const auto& [rec, file] : rows)
        seed_counts[{rec.n, rec.l, rec.v, rec.seed}] += 1;

    std::ostringstream os;
    os << "n,l,v,method,energy_mean,energy_std,e_true,percent_error,seed,version,warnings\n";
    for (const auto& [rec, file] : rows) {
        os << rec.n << "," << rec.l << "," << fmt_double(rec.v) << "," << rec.method << ","
           << fmt_double(rec.energy_mean) << "," << fmt_double(rec.energy_std) << ","
           << (rec.e_true ? fmt_double(*rec.e_true) : "") << ","
           << (rec.percent_error ? fmt_double(*rec.percent_error) : "") << "," << rec.seed << ","
           << rec.version << ","
           << (seed_counts[{rec.n, rec.l, rec.v, rec.seed}] > 1 ? "duplicate-seed" : "") << "\n";
    }
    return os.str();
}

}  // namespace flownqs
