// Copyright 2026 The flownqs Authors
// SPDX-License-Identifier: Apache-2.0

/**
 * @file flownqs.cpp
 * @brief Experiment CLI: exact diagonalization, flow/NQS training, inference
 *        from a checkpoint, and report merging.
 */

#include <CLI11.hpp>

#include <cstdio>
#include <exception>
#include <iostream>
#include <optional>
#include <string>

#include "flownqs/experiment.hpp"

namespace {

struct CommonOpts {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out;
    std::optional<int> threads;
};

void add_common(CLI::App* cmd, CommonOpts& o, bool config_required = true) {
    auto* c = cmd->add_option("--config", o.config_path, "experiment config JSON");
    if (config_required) c->required();
    cmd->add_option("--seed", o.seed, "override the config seed");
    cmd->add_option("--out", o.out, "override the output directory");
    cmd->add_option("--threads", o.threads, "worker threads (0 = hardware)");
}

flownqs::ExperimentConfig load_config(const CommonOpts& o) {
    flownqs::ExperimentConfig cfg = flownqs::ExperimentConfig::from_file(o.config_path);
    if (o.seed) {
        cfg.seed = *o.seed;
        cfg.train.seed = *o.seed;
    }
    if (o.out) cfg.out_dir = *o.out;
    if (o.threads) {
        cfg.threads = *o.threads;
        cfg.train.threads = *o.threads;
        cfg.infer.threads = *o.threads;
    }
    return cfg;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"flow-assisted neural quantum state solver for transverse-field Ising chains"};
    app.require_subcommand(1);

    CommonOpts ed_opts, train_opts, infer_opts;
    std::string checkpoint;
    std::string report_dir;

    CLI::App* ed = app.add_subcommand("ed", "exact ground-state energy (dense or Lanczos)");
    add_common(ed, ed_opts);

    CLI::App* tr = app.add_subcommand("train", "train the flow sampler and NQS");
    add_common(tr, train_opts);

    CLI::App* in = app.add_subcommand("infer", "inference from a converged flow checkpoint");
    add_common(in, infer_opts);
    in->add_option("--checkpoint", checkpoint,
                   "flow checkpoint stem (without .json/.bin)")
        ->required();

    CLI::App* rp = app.add_subcommand("report", "merge result records into a CSV table");
    rp->add_option("--out", report_dir, "directory containing result records")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (ed->parsed()) {
            flownqs::ExperimentConfig cfg = load_config(ed_opts);
            flownqs::ResultRecord rec = flownqs::run_ed(cfg);
            std::cout << "method " << rec.method << "  n=" << rec.n << " l=" << rec.l
                      << " v=" << flownqs::fmt_double(rec.v)
                      << "  E = " << flownqs::fmt_double(rec.energy_mean) << "\n";
        } else if (tr->parsed()) {
            flownqs::ExperimentConfig cfg = load_config(train_opts);
            flownqs::TrainArtifacts art = flownqs::run_train(cfg);
            std::cout << (art.converged ? "converged" : "not converged (flagged)") << " after "
                      << art.updates_run << " updates\n"
                      << "flow checkpoint: " << art.flow_checkpoint.string() << ".json/.bin\n"
                      << "history: " << art.history_csv.string() << "\n";
        } else if (in->parsed()) {
            flownqs::ExperimentConfig cfg = load_config(infer_opts);
            flownqs::ResultRecord rec = flownqs::run_infer(cfg, checkpoint);
            std::cout << "E = " << flownqs::fmt_double(rec.energy_mean) << " +- "
                      << flownqs::fmt_double(rec.energy_std) << "\n";
            if (rec.percent_error)
                std::cout << "percent error vs ED: " << flownqs::fmt_double(*rec.percent_error)
                          << " %\n";
        } else if (rp->parsed()) {
            std::cout << flownqs::run_report(report_dir);
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
