// grudw: command-line front end for cohort generation, training, evaluation,
// explanation and streaming prediction.
//
// Exit codes: 0 ok, 1 usage, 2 data/validation, 3 numerical failure.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/chrono.h>
#include <fmt/format.h>
#include <nlohmann/json.hpp>
#include <openssl/evp.h>

#include "grudw/grudw.hpp"

namespace fs = std::filesystem;
using namespace grudw;

namespace {

// ---------------------------------------------------------------------------
// manifests

std::string git_blob_sha1(const std::string& content) {
    const std::string blob = "blob " + std::to_string(content.size()) + '\0' + content;
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_Digest(blob.data(), blob.size(), md, &len, EVP_sha1(), nullptr);
    std::string hex;
    for (unsigned int i = 0; i < len; ++i) hex += fmt::format("{:02x}", md[i]);
    return hex;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw DataError("cannot open " + p.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// Files under a directory are hashed one by one, in name order.
void hash_path(const fs::path& p, nlohmann::ordered_json& into) {
    if (fs::is_directory(p)) {
        std::vector<fs::path> files;
        for (const auto& e : fs::directory_iterator(p)) {
            if (e.is_regular_file() && e.path().filename() != "manifest.json") files.push_back(e.path());
        }
        std::sort(files.begin(), files.end());
        for (const auto& f : files) into.push_back({{"path", f.string()}, {"sha1", git_blob_sha1(slurp(f))}});
    } else if (fs::exists(p)) {
        into.push_back({{"path", p.string()}, {"sha1", git_blob_sha1(slurp(p))}});
    }
}

std::string utc_now() {
    return fmt::format("{:%Y-%m-%dT%H:%M:%SZ}", fmt::gmtime(std::chrono::system_clock::to_time_t(std::chrono::system_clock::now())));
}

struct Manifest {
    std::string command;
    std::string started = utc_now();
    std::optional<std::uint64_t> seed;
    std::string config;
    std::vector<fs::path> inputs;
    std::vector<fs::path> outputs;
    std::vector<std::string> argv;

    // Directory outputs get DIR/manifest.json, file outputs FILE.manifest.json.
    void write(const fs::path& out) const {
        nlohmann::ordered_json j;
        j["command"] = command;
        j["argv"] = argv;
        j["config"] = config;
        j["seed"] = seed ? nlohmann::ordered_json(*seed) : nlohmann::ordered_json(nullptr);
        j["inputs"] = nlohmann::ordered_json::array();
        for (const auto& p : inputs) hash_path(p, j["inputs"]);
        j["outputs"] = nlohmann::ordered_json::array();
        for (const auto& p : outputs) hash_path(p, j["outputs"]);
        j["started_at"] = started;
        j["finished_at"] = utc_now();
        const fs::path target = fs::is_directory(out) ? out / "manifest.json" : fs::path(out.string() + ".manifest.json");
        std::ofstream f(target);
        if (!f) throw DataError("cannot write " + target.string());
        f << j.dump(1) << '\n';
    }
};

void write_file(const fs::path& p, const std::string& text) {
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    std::ofstream out(p, std::ios::binary);
    if (!out) throw DataError("cannot write " + p.string());
    out << text;
    if (!out) throw DataError("failed writing " + p.string());
}

// ---------------------------------------------------------------------------
// shared option groups

std::vector<PatientRecord> load_cohort(const fs::path& p) {
    auto res = ingest(p);
    for (const auto& w : res.warnings) std::cerr << "warning: " << w << '\n';
    if (res.records.empty()) throw DataError(p.string() + ": cohort has no patients");
    return std::move(res.records);
}

// Records in the holdout chunk when a fold file is given, everything otherwise.
std::vector<PatientRecord> evaluation_records(const std::vector<PatientRecord>& all, const std::string& splits) {
    if (splits.empty()) return all;
    const auto folds = load_splits(splits);
    auto out = select(all, folds.members(all, kHoldout));
    if (out.empty()) throw DataError(splits + ": no holdout patients (fold 0)");
    return out;
}

std::vector<PatientRecord> training_records(const std::vector<PatientRecord>& all, const std::string& splits) {
    if (splits.empty()) return all;
    const auto folds = load_splits(splits);
    std::vector<PatientRecord> out;
    for (const auto& r : all) {
        auto it = folds.assignment.find(r.id);
        if (it == folds.assignment.end()) throw DataError(splits + ": no entry for patient " + r.id);
        if (it->second != kHoldout) out.push_back(r);
    }
    if (out.empty()) throw DataError(splits + ": no training patients");
    return out;
}

std::vector<std::size_t> steps_for_days(const TimeGrid& grid, const std::vector<int>& days) {
    std::vector<std::size_t> steps;
    for (int d : days) {
        const auto k = grid.step_of_day(d);
        if (!k || grid.day(*k) != d) throw DataError(fmt::format("day {} is not a grid day", d));
        steps.push_back(*k);
    }
    return steps;
}

std::vector<Checkpoint> load_checkpoints(const std::vector<std::string>& paths) {
    std::vector<Checkpoint> out;
    for (const auto& p : paths) out.push_back(load_checkpoint(p, FeatureRoster::standard().hash()));
    return out;
}

// ---------------------------------------------------------------------------
// commands

struct GenerateOpts {
    std::size_t n = 0;
    std::uint64_t seed = 0;
    std::string out;
    double censoring = 0.49;
};

void cohort_generate(const GenerateOpts& o, Manifest& man) {
    auto cfg = SyntheticConfig::standard();
    cfg.n = o.n;
    cfg.censoring_fraction = o.censoring;
    const auto syn = generate_synthetic_cohort(cfg, o.seed);
    if (!syn.censoring_target_reached) {
        std::cerr << fmt::format("warning: censoring target {:.3f} not reached (achieved {:.3f})\n", o.censoring,
                                 syn.achieved_censoring);
    }
    export_cohort(syn.records, o.out);
    // Ground truth alongside the cohort, for evaluation against the generator.
    std::string truth = "patient_id,kappa,lambda_years,linear_predictor,event_day,censor_day\n";
    for (const auto& t : syn.truth) {
        truth += fmt::format("{},{:.17g},{:.17g},{:.17g},{},{}\n", t.id, t.kappa, t.lambda, t.linear_predictor,
                             t.event_day, t.censor_day);
    }
    const fs::path truth_path = fs::is_directory(o.out) ? fs::path(o.out) / "truth.csv" : fs::path(o.out + ".truth.csv");
    write_file(truth_path, truth);
    man.seed = o.seed;
    man.outputs = {o.out, truth_path};
    man.write(o.out);
}

struct EncodeOpts {
    std::string cohort, out;
    std::uint64_t seed = 0;
    double holdout = 0.2;
    int folds = 5;
};

void prep_encode(const EncodeOpts& o, Manifest& man) {
    const auto records = load_cohort(o.cohort);
    if (!(o.holdout >= 0.0 && o.holdout < 1.0)) throw DataError("--holdout must lie in [0, 1)");
    const auto n_holdout = std::size_t(std::llround(o.holdout * double(records.size())));
    const auto folds = make_splits(records, n_holdout, o.folds, o.seed);
    const auto roster = FeatureRoster::standard();
    std::vector<PatientRecord> train;
    for (const auto& r : records) {
        if (folds.assignment.at(r.id) != kHoldout) train.push_back(r);
    }
    const auto norms = compute_norms(train, roster);
    for (const auto& w : norms.warnings) std::cerr << "warning: " << w << '\n';
    const auto grid = build_grid();
    EncodeDiagnostics diag;
    const auto seqs = encode_all(records, grid, roster, norms, &diag);

    fs::create_directories(o.out);
    write_file(fs::path(o.out) / "splits.csv", splits_csv(records, folds));
    std::string nt = "feature,mean,sd,empirical_mean\n";
    for (std::size_t d = 0; d < roster.size(); ++d) {
        nt += fmt::format("{},{:.17g},{:.17g},{:.17g}\n", roster[d].name, norms.raw[d].mean, norms.raw[d].sd,
                          norms.empirical_means[d]);
    }
    write_file(fs::path(o.out) / "norms.csv", nt);
    std::ofstream enc(fs::path(o.out) / "encoded.jsonl", std::ios::binary);
    for (const auto& s : seqs) {
        nlohmann::ordered_json j;
        j["id"] = s.id;
        j["valid_steps"] = s.valid_steps;
        for (const auto& [name, M] : {std::pair{"x", &s.x}, std::pair{"m", &s.m}, std::pair{"delta", &s.delta}}) {
            auto& rows = j[name];
            rows = nlohmann::ordered_json::array();
            for (Eigen::Index r = 0; r < M->rows(); ++r) {
                std::vector<double> row(std::size_t(M->cols()));
                for (Eigen::Index t = 0; t < M->cols(); ++t) row[std::size_t(t)] = (*M)(r, t);
                rows.push_back(row);
            }
        }
        enc << j.dump() << '\n';
    }
    enc.close();
    std::cerr << fmt::format("encoded {} patients ({} holdout, {} folds); {} observations outside the grid, "
                             "{} values against a zero SD\n",
                             records.size(), n_holdout, o.folds, diag.clipped_observations, diag.zero_sd_values);
    man.seed = o.seed;
    man.inputs = {o.cohort};
    man.outputs = {o.out};
    man.write(o.out);
}

struct TrainGrudOpts {
    std::string cohort, out, config, splits;
    std::optional<std::uint64_t> seed;
    std::vector<std::string> set;
    std::optional<int> epochs, hidden, batch_size, fold;
    std::optional<double> learning_rate;
    double holdout = 0.2;
    int folds = 5;
};

void train_grud(const TrainGrudOpts& o, Manifest& man) {
    TrainConfig cfg;
    if (!o.config.empty()) cfg = load_train_config(o.config);
    for (const auto& kv : o.set) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw DataError("--set expects key=value, got '" + kv + "'");
        cfg.set(trim(kv.substr(0, eq)), trim(kv.substr(eq + 1)));
    }
    if (o.epochs) cfg.epochs = *o.epochs;
    if (o.hidden) cfg.hidden = *o.hidden;
    if (o.batch_size) cfg.batch_size = *o.batch_size;
    if (o.learning_rate) cfg.learning_rate = *o.learning_rate;
    cfg.seed = *o.seed;
    cfg.validate();

    const auto records = load_cohort(o.cohort);
    FoldAssignment folds;
    if (!o.splits.empty()) {
        folds = load_splits(o.splits);
    } else {
        folds = make_splits(records, std::size_t(std::llround(o.holdout * double(records.size()))), o.folds, cfg.seed);
    }
    const auto runs = train_folds(records, folds, build_grid(), FeatureRoster::standard(), cfg, {}, o.fold);

    fs::create_directories(o.out);
    std::vector<std::pair<int, TrainOutcome>> curves;
    man.outputs.clear();
    for (const auto& run : runs) {
        const auto path = fs::path(o.out) / fmt::format("fold_{}.ckpt", run.fold);
        save_checkpoint(run.checkpoint, path);
        curves.emplace_back(run.fold, run.outcome);
        std::cerr << fmt::format("fold {}: best epoch {} of {}{}{}\n", run.fold, run.outcome.best_epoch,
                                 run.outcome.curve.size(), run.outcome.early_stopped ? " (early stop)" : "",
                                 run.outcome.clipped_losses ? fmt::format(", {} clipped losses", run.outcome.clipped_losses)
                                                            : std::string());
    }
    write_file(fs::path(o.out) / "loss_curve.csv", loss_curve_csv(curves));
    write_file(fs::path(o.out) / "config.txt", to_text(cfg));
    if (o.splits.empty()) write_file(fs::path(o.out) / "splits.csv", splits_csv(records, folds));
    man.seed = cfg.seed;
    man.config = o.config;
    man.inputs = {o.cohort};
    if (!o.config.empty()) man.inputs.push_back(o.config);
    if (!o.splits.empty()) man.inputs.push_back(o.splits);
    man.outputs = {o.out};
    man.write(o.out);
}

struct BaselineOpts {
    std::string cohort, out, splits;
    double l2 = 1.0;
};

void train_aft(const BaselineOpts& o, Manifest& man) {
    const auto roster = FeatureRoster::standard();
    const auto train = training_records(load_cohort(o.cohort), o.splits);
    const auto fit = fit_aft_baseline(train, roster);
    fs::create_directories(o.out);
    write_file(fs::path(o.out) / "aft_model.json", aft_to_string(fit, roster));
    write_file(fs::path(o.out) / "coefficients.csv", aft_coefficients_csv(fit, roster));
    std::cerr << fmt::format("aft: {} patients, {} iterations, loglik {:.6f}, sigma {:.4f}\n", train.size(),
                             fit.model.iterations, fit.model.loglik, fit.model.sigma);
    man.inputs = {o.cohort};
    if (!o.splits.empty()) man.inputs.push_back(o.splits);
    man.outputs = {o.out};
    man.write(o.out);
}

void train_mtlr(const BaselineOpts& o, Manifest& man) {
    const auto roster = FeatureRoster::standard();
    const auto all = load_cohort(o.cohort);
    const auto train = training_records(all, o.splits);
    MtlrFitOptions opt;
    opt.l2_strength = o.l2;
    const auto fit = fit_mtlr_baseline(train, roster, opt);
    fs::create_directories(o.out);
    write_file(fs::path(o.out) / "mtlr_model.json", mtlr_to_string(fit, roster));
    write_file(fs::path(o.out) / "survival_curves.csv", mtlr_curves_csv(fit, all, roster));
    man.inputs = {o.cohort};
    if (!o.splits.empty()) man.inputs.push_back(o.splits);
    man.outputs = {o.out};
    man.write(o.out);
}

struct SweepOpts {
    std::string cohort, out, splits, aft, mtlr;
    std::vector<std::string> checkpoints;
    std::vector<std::string> metrics;
    std::vector<double> horizons{1.0, 3.0, 5.0};
    std::vector<int> days;
};

void eval_sweep(const SweepOpts& o, Manifest& man) {
    const auto roster = FeatureRoster::standard();
    const auto records = evaluation_records(load_cohort(o.cohort), o.splits);
    const auto cks = load_checkpoints(o.checkpoints);
    const auto& grid = cks.front().meta.grid;
    for (const auto& ck : cks) {
        if (!(ck.meta.grid == grid)) throw DataError("eval sweep: checkpoints use different grids");
    }
    std::vector<std::unique_ptr<SweepModel>> owned;
    std::vector<ModelGroup> groups;
    ModelGroup grud{"grud", {}};
    for (const auto& ck : cks) {
        owned.push_back(std::make_unique<GrudSweepModel>(ck, records));
        grud.replicates.push_back(owned.back().get());
    }
    groups.push_back(grud);
    std::vector<double> bg;
    if (!o.aft.empty()) {
        const auto fit = load_aft(o.aft, roster);
        owned.push_back(std::make_unique<AftSweepModel>(fit.model, aft_design(fit, records, roster), grid));
        groups.push_back({"aft", {owned.back().get()}});
    }
    if (!o.mtlr.empty()) {
        const auto fit = load_mtlr(o.mtlr, roster);
        const auto X = mtlr_design(fit, records, roster);
        owned.push_back(std::make_unique<MtlrSweepModel>(fit.model, X, grid));
        groups.push_back({"mtlr", {owned.back().get()}});
        bg = best_guess_totals(records, fit.model, X);
    }
    SweepOptions opt;
    opt.horizons = o.horizons;
    if (!o.metrics.empty()) opt.metrics = o.metrics;
    if (!o.days.empty()) opt.steps = steps_for_days(grid, o.days);
    const auto report = time_sweep(groups, SweepCohort::from(records, bg), grid, opt);
    write_file(o.out, report_csv(report));
    man.inputs = {o.cohort};
    for (const auto& c : o.checkpoints) man.inputs.push_back(c);
    for (const auto* p : {&o.splits, &o.aft, &o.mtlr}) {
        if (!p->empty()) man.inputs.push_back(*p);
    }
    man.outputs = {o.out};
    man.write(o.out);
}

struct ExplainOpts {
    std::string cohort, out, splits;
    std::vector<std::string> checkpoints, features;
    std::optional<std::uint64_t> seed;
    int n_perm = 5;
    std::vector<double> horizons{1.0, 3.0, 5.0};
    std::vector<int> days;
};

void explain_importance(const ExplainOpts& o, Manifest& man) {
    const auto records = evaluation_records(load_cohort(o.cohort), o.splits);
    const auto cks = load_checkpoints(o.checkpoints);
    ImportanceOptions opt;
    opt.n_perm = o.n_perm;
    opt.horizons = o.horizons;
    opt.seed = *o.seed;
    if (!o.days.empty()) opt.steps = steps_for_days(cks.front().meta.grid, o.days);
    if (o.n_perm < 1) throw DataError("--n-perm must be >= 1");
    std::vector<ImportanceRow> rows;
    for (const auto& f : o.features) {
        auto r = permutation_importance(cks, records, f, opt);
        rows.insert(rows.end(), r.begin(), r.end());
    }
    write_file(o.out, importance_csv(rows));
    man.seed = *o.seed;
    man.inputs = {o.cohort};
    for (const auto& c : o.checkpoints) man.inputs.push_back(c);
    if (!o.splits.empty()) man.inputs.push_back(o.splits);
    man.outputs = {o.out};
    man.write(o.out);
}

void explain_pdp(const ExplainOpts& o, Manifest& man) {
    const auto records = evaluation_records(load_cohort(o.cohort), o.splits);
    const auto cks = load_checkpoints(o.checkpoints);
    const std::vector<int> days = o.days.empty() ? std::vector<int>{0, 360, 720, 1080, 1440, 1800} : o.days;
    std::vector<PdpRow> rows;
    for (const auto& f : o.features) {
        auto r = partial_dependence(cks, records, f, days);
        rows.insert(rows.end(), r.begin(), r.end());
    }
    write_file(o.out, pdp_csv(rows));
    man.inputs = {o.cohort};
    for (const auto& c : o.checkpoints) man.inputs.push_back(c);
    if (!o.splits.empty()) man.inputs.push_back(o.splits);
    man.outputs = {o.out};
    man.write(o.out);
}

// Reads `patient_id,day,feature,value` lines and answers each with the
// prediction at the patient's latest information day. Besides observations a
// line may carry `age` (age at the index date), a static feature, or a
// comorbidity (a non-zero value records a diagnosis on that day).
void predict_stream_cmd(const std::string& checkpoint) {
    const auto ck = load_checkpoint(checkpoint);
    const auto& roster = ck.meta.roster;
    const std::vector<double> horizons{1.0, 3.0, 5.0};
    struct State {
        PatientRecord record;
        int latest = 0;
    };
    std::map<std::string, State> patients;
    std::string line;
    std::size_t line_no = 0;
    auto complain = [&](const std::string& what) {
        std::cerr << fmt::format("stdin:{}: {}; line skipped\n", line_no, what);
    };
    while (std::getline(std::cin, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (trim(line).empty()) continue;
        if (line == "patient_id,day,feature,value") continue;
        const auto f = split_csv_line(line);
        if (f.size() != 4) {
            complain(fmt::format("expected 4 fields, found {}", f.size()));
            continue;
        }
        int day = 0;
        double value = 0.0;
        {
            auto [p, ec] = std::from_chars(f[1].data(), f[1].data() + f[1].size(), day);
            if (ec != std::errc() || p != f[1].data() + f[1].size()) {
                complain("day is not an integer: '" + f[1] + "'");
                continue;
            }
            auto [q, ec2] = std::from_chars(f[3].data(), f[3].data() + f[3].size(), value);
            if (ec2 != std::errc() || q != f[3].data() + f[3].size() || !std::isfinite(value)) {
                complain("value is not a finite number: '" + f[3] + "'");
                continue;
            }
        }
        if (f[0].empty()) {
            complain("empty patient_id");
            continue;
        }
        const auto idx = roster.index_of(f[2]);
        if (!idx) {
            complain("unknown feature '" + f[2] + "'");
            continue;
        }
        const bool fresh = !patients.count(f[0]);
        State next = fresh ? State{} : patients.at(f[0]);
        next.record.id = f[0];
        const auto& spec = roster[*idx];
        if (spec.name == kAgeFeature) {
            next.record.age_at_index = value;
        } else if (spec.is_static) {
            if (value != 0.0 && value != 1.0) {
                complain(spec.name + " must be 0 or 1");
                continue;
            }
            next.record.static_features[spec.name] = int(value);
        } else if (spec.kind == FeatureKind::comorbidity) {
            if (value != 0.0) next.record.diagnoses.push_back({day, spec.name});
        } else {
            next.record.observations.push_back({day, spec.name, value});
        }
        next.latest = fresh ? day : std::max(next.latest, day);
        try {
            const auto p = predict_at_day(ck, next.record, next.latest, horizons);
            std::printf("%s\n", fmt::format("{},{},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g}", next.record.id, p.day,
                                             p.params.kappa(), p.params.lambda(), p.pmst, p.survival[0], p.survival[1],
                                             p.survival[2])
                                     .c_str());
            std::fflush(stdout);
            patients[f[0]] = std::move(next);
        } catch (const DataError& e) {
            complain(e.what());
        } catch (const NumericalError& e) {
            complain(e.what());
        }
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"GRU-D Weibull survival modelling"};
    app.require_subcommand(1);
    app.set_help_all_flag("--help-all", "Show help for every subcommand");

    Manifest man;
    for (int i = 0; i < argc; ++i) man.argv.emplace_back(argv[i]);

    auto* cohort = app.add_subcommand("cohort", "Cohort utilities");
    cohort->require_subcommand(1);
    GenerateOpts gen;
    auto* generate = cohort->add_subcommand("generate", "Generate a synthetic cohort (CSV directory or .jsonl file)");
    generate->add_option("--n", gen.n, "Number of patients")->required()->check(CLI::PositiveNumber);
    generate->add_option("--seed", gen.seed, "Random seed")->required();
    generate->add_option("--out", gen.out, "Output directory, or a .jsonl path")->required();
    generate->add_option("--censoring", gen.censoring, "Target censored fraction")->capture_default_str();

    auto* prep = app.add_subcommand("prep", "Data preparation");
    prep->require_subcommand(1);
    EncodeOpts enc;
    auto* encode_cmd = prep->add_subcommand("encode", "Split, normalise and encode a cohort onto the grid");
    encode_cmd->add_option("--cohort", enc.cohort, "Cohort directory or .jsonl")->required();
    encode_cmd->add_option("--out", enc.out, "Output directory")->required();
    encode_cmd->add_option("--seed", enc.seed, "Random seed for the splits")->required();
    encode_cmd->add_option("--holdout", enc.holdout, "Held-out fraction")->capture_default_str();
    encode_cmd->add_option("--folds", enc.folds, "Number of folds")->capture_default_str();

    auto* train = app.add_subcommand("train", "Model fitting");
    train->require_subcommand(1);
    TrainGrudOpts tg;
    auto* grud_cmd = train->add_subcommand("grud", "Train GRU-D Weibull models, one per fold");
    grud_cmd->add_option("--cohort", tg.cohort, "Cohort directory or .jsonl")->required();
    grud_cmd->add_option("--out", tg.out, "Output directory")->required();
    grud_cmd->add_option("--seed", tg.seed, "Random seed")->required();
    grud_cmd->add_option("--config", tg.config, "key = value config file");
    grud_cmd->add_option("--set", tg.set, "Override a config key (key=value), repeatable");
    grud_cmd->add_option("--splits", tg.splits, "Fold file from 'prep encode'");
    grud_cmd->add_option("--epochs", tg.epochs, "Epochs");
    grud_cmd->add_option("--hidden", tg.hidden, "Hidden size");
    grud_cmd->add_option("--batch-size", tg.batch_size, "Batch size");
    grud_cmd->add_option("--learning-rate", tg.learning_rate, "Learning rate");
    grud_cmd->add_option("--fold", tg.fold, "Train only this fold");
    grud_cmd->add_option("--holdout", tg.holdout, "Held-out fraction when no fold file is given")->capture_default_str();
    grud_cmd->add_option("--folds", tg.folds, "Folds when no fold file is given")->capture_default_str();

    BaselineOpts ba;
    auto* aft_cmd = train->add_subcommand("aft", "Fit the Weibull AFT baseline");
    aft_cmd->add_option("--cohort", ba.cohort, "Cohort directory or .jsonl")->required();
    aft_cmd->add_option("--out", ba.out, "Output directory")->required();
    aft_cmd->add_option("--splits", ba.splits, "Fold file; the holdout is excluded from fitting");
    BaselineOpts bm;
    auto* mtlr_cmd = train->add_subcommand("mtlr", "Fit the MTLR baseline");
    mtlr_cmd->add_option("--cohort", bm.cohort, "Cohort directory or .jsonl")->required();
    mtlr_cmd->add_option("--out", bm.out, "Output directory")->required();
    mtlr_cmd->add_option("--splits", bm.splits, "Fold file; the holdout is excluded from fitting");
    mtlr_cmd->add_option("--l2", bm.l2, "L2 penalty on theta")->capture_default_str();

    auto* eval = app.add_subcommand("eval", "Evaluation");
    eval->require_subcommand(1);
    SweepOpts sw;
    auto* sweep_cmd = eval->add_subcommand("sweep", "Metrics along follow-up time");
    sweep_cmd->add_option("--cohort", sw.cohort, "Cohort directory or .jsonl")->required();
    sweep_cmd->add_option("--checkpoint", sw.checkpoints, "GRU-D checkpoint, repeatable")->required();
    sweep_cmd->add_option("--out", sw.out, "Report CSV")->required();
    sweep_cmd->add_option("--splits", sw.splits, "Fold file; evaluates the holdout only");
    sweep_cmd->add_option("--aft", sw.aft, "AFT model file");
    sweep_cmd->add_option("--mtlr", sw.mtlr, "MTLR model file");
    sweep_cmd->add_option("--metric", sw.metrics, "Metric to report, repeatable (default: all)");
    sweep_cmd->add_option("--horizon", sw.horizons, "Horizon in years, repeatable");
    sweep_cmd->add_option("--day", sw.days, "Grid day to evaluate, repeatable (default: every day >= 0)");

    auto* explain = app.add_subcommand("explain", "Explainability");
    explain->require_subcommand(1);
    ExplainOpts ei;
    auto* imp_cmd = explain->add_subcommand("importance", "Permutation importance across follow-up time");
    imp_cmd->add_option("--cohort", ei.cohort, "Cohort directory or .jsonl")->required();
    imp_cmd->add_option("--checkpoint", ei.checkpoints, "Checkpoint, repeatable")->required();
    imp_cmd->add_option("--feature", ei.features, "Feature, repeatable")->required();
    imp_cmd->add_option("--seed", ei.seed, "Random seed")->required();
    imp_cmd->add_option("--out", ei.out, "Importance CSV")->required();
    imp_cmd->add_option("--splits", ei.splits, "Fold file; uses the holdout only");
    imp_cmd->add_option("--n-perm", ei.n_perm, "Permutations per checkpoint")->capture_default_str();
    imp_cmd->add_option("--horizon", ei.horizons, "Horizon in years, repeatable");
    imp_cmd->add_option("--day", ei.days, "Grid day, repeatable (default: every day >= 0)");
    ExplainOpts ep;
    auto* pdp_cmd = explain->add_subcommand("pdp", "Partial dependence of the predicted median");
    pdp_cmd->add_option("--cohort", ep.cohort, "Cohort directory or .jsonl")->required();
    pdp_cmd->add_option("--checkpoint", ep.checkpoints, "Checkpoint, repeatable")->required();
    pdp_cmd->add_option("--feature", ep.features, "Feature, repeatable")->required();
    pdp_cmd->add_option("--out", ep.out, "PDP CSV")->required();
    pdp_cmd->add_option("--splits", ep.splits, "Fold file; uses the holdout only");
    pdp_cmd->add_option("--day", ep.days, "Follow-up grid day, repeatable (default: yearly 0..1800)");

    auto* predict = app.add_subcommand("predict", "Prediction");
    predict->require_subcommand(1);
    std::string stream_ck;
    auto* stream_cmd = predict->add_subcommand("stream", "Read observation lines on stdin, write predictions");
    stream_cmd->add_option("--checkpoint", stream_ck, "Checkpoint")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    }

    try {
        if (generate->parsed()) {
            man.command = "cohort generate";
            cohort_generate(gen, man);
        } else if (encode_cmd->parsed()) {
            man.command = "prep encode";
            prep_encode(enc, man);
        } else if (grud_cmd->parsed()) {
            man.command = "train grud";
            train_grud(tg, man);
        } else if (aft_cmd->parsed()) {
            man.command = "train aft";
            train_aft(ba, man);
        } else if (mtlr_cmd->parsed()) {
            man.command = "train mtlr";
            train_mtlr(bm, man);
        } else if (sweep_cmd->parsed()) {
            man.command = "eval sweep";
            eval_sweep(sw, man);
        } else if (imp_cmd->parsed()) {
            man.command = "explain importance";
            explain_importance(ei, man);
        } else if (pdp_cmd->parsed()) {
            man.command = "explain pdp";
            explain_pdp(ep, man);
        } else if (stream_cmd->parsed()) {
            predict_stream_cmd(stream_ck);
        }
    } catch (const NumericalError& e) {
        std::cerr << "grudw: numerical failure: " << e.what() << '\n';
        return 3;
    } catch (const DataError& e) {
        std::cerr << "grudw: " << e.what() << '\n';
        return 2;
    } catch (const std::invalid_argument& e) {
        std::cerr << "grudw: " << e.what() << '\n';
        return 2;
    } catch (const std::out_of_range& e) {
        std::cerr << "grudw: " << e.what() << '\n';
        return 2;
    } catch (const fs::filesystem_error& e) {
        std::cerr << "grudw: " << e.what() << '\n';
        return 2;
    }
    return 0;
}
