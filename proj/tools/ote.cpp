// Command-line entry point. Subcommands: prepare, train, finetune, eval, verify.
//
// Configuration precedence, lowest to highest:
//   built-in defaults < --config file < OTE_* environment paths < command-line flags.
// Environment overrides exist for path-valued keys only (OTE_DATA_DIR, OTE_OUT_DIR,
// OTE_CHECKPOINT_OUT, OTE_INIT_CHECKPOINT, OTE_REPORT_OUT).
//
// Exit codes: 0 success, 2 configuration, 3 data, 4 numeric, 5 invariant violation.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>
#include <streambuf>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>

#include "ote/ote.hpp"

namespace fs = std::filesystem;
using namespace ote;

namespace {

// Duplicates a log stream onto stdout and a file.
class TeeBuf : public std::streambuf {
public:
    TeeBuf(std::streambuf* a, std::streambuf* b) : a_(a), b_(b) {}

protected:
    int overflow(int c) override {
        if (c == EOF) return !EOF;
        const int ra = a_ ? a_->sputc(static_cast<char>(c)) : c;
        const int rb = b_ ? b_->sputc(static_cast<char>(c)) : c;
        return (ra == EOF || rb == EOF) ? EOF : c;
    }
    int sync() override {
        const int ra = a_ ? a_->pubsync() : 0;
        const int rb = b_ ? b_->pubsync() : 0;
        return (ra == 0 && rb == 0) ? 0 : -1;
    }

private:
    std::streambuf* a_;
    std::streambuf* b_;
};

// Per-subcommand flag set. Every registered flag mirrors one config key; only
// flags the user actually passed override the config file.
struct CmdArgs {
    std::string config_path;
    std::string expect_path;
    std::map<std::string, std::string> vals;
    std::vector<std::pair<std::string, CLI::Option*>> opts;

    void add_config(CLI::App* cmd) {
        cmd->add_option("--config", config_path, "key = value config file");
    }

    void add_key(CLI::App* cmd, const std::string& key, const std::string& desc) {
        std::string names = "--" + key;
        std::string dashed = key;
        for (char& c : dashed)
            if (c == '_') c = '-';
        if (dashed != key) names = "--" + dashed + "," + names;
        opts.emplace_back(key, cmd->add_option(names, vals[key], desc));
    }

    void add_bool_key(CLI::App* cmd, const std::string& key, const std::string& desc) {
        std::string names = "--" + key;
        std::string dashed = key;
        for (char& c : dashed)
            if (c == '_') c = '-';
        if (dashed != key) names = "--" + dashed + "," + names;
        vals[key] = "true";
        opts.emplace_back(key, cmd->add_flag(names, desc));
    }

    // Convenience aliases that still map onto config keys.
    void add_alias(CLI::App* cmd, const std::string& flag, const std::string& key,
                   const std::string& desc) {
        opts.emplace_back(key, cmd->add_option(flag, vals[key], desc));
    }

    KvConfig merged() const {
        KvConfig kv;
        if (!config_path.empty()) kv = KvConfig::parse_file(config_path);
        static const std::pair<const char*, const char*> env_paths[] = {
            {"OTE_DATA_DIR", "data_dir"},
            {"OTE_OUT_DIR", "out_dir"},
            {"OTE_CHECKPOINT_OUT", "checkpoint_out"},
            {"OTE_INIT_CHECKPOINT", "init_checkpoint"},
            {"OTE_REPORT_OUT", "report_out"},
        };
        for (const auto& [env, key] : env_paths)
            if (const char* v = std::getenv(env); v && *v) kv.set(key, v);
        for (const auto& [key, opt] : opts)
            if (opt->count() > 0) kv.set(key, vals.at(key));
        return kv;
    }
};

// Shared train/finetune/eval knobs layered on top of the merged key set.
RunConfig resolve(const KvConfig& kv) {
    RunConfig rc = RunConfig::from_kv(kv);
    if (!kv.has("threads")) rc.train.threads = hardware_threads();
    if (rc.deterministic) rc.train.threads = 1;
    rc.validate();
    return rc;
}

void enforce_stage(KvConfig& kv, Stage want) {
    if (kv.has("stage")) {
        const Stage got = parse_stage(kv.get_string("stage", ""));
        if (got != want)
            throw ConfigError(std::string("config names stage ") + to_string(got) +
                              " but the command runs stage " + to_string(want));
    }
    kv.set("stage", to_string(want));
}

// ---------------------------------------------------------------------------
// prepare
// ---------------------------------------------------------------------------

int cmd_prepare(const RunConfig& rc, const std::string& expect_path) {
    if (rc.data_dir.empty()) throw ConfigError("prepare: data_dir is required");
    const Dataset data = Dataset::load(rc.data_dir);
    const PairCounts counts = build_pair_counts(data.train);

    std::size_t cat[4] = {0, 0, 0, 0};
    for (const Triple& t : data.valid.triples)
        ++cat[static_cast<int>(classify_triple(t, counts))];

    std::vector<std::pair<std::string, std::uint64_t>> stats;
    stats.emplace_back("entity_count", data.vocab.entity_count());
    stats.emplace_back("relation_count", data.vocab.relation_count());
    stats.emplace_back("train_count", data.train.size());
    stats.emplace_back("valid_count", data.valid.size());
    stats.emplace_back("test_count", data.test.size());
    for (int c = 0; c < 4; ++c)
        stats.emplace_back(std::string("valid_cat.") + to_string(static_cast<Category>(c)),
                           cat[c]);
    stats.emplace_back("entity_hash", data.vocab.entity_hash());
    stats.emplace_back("relation_hash", data.vocab.relation_hash());

    std::ostringstream report;
    for (const auto& [k, v] : stats) report << k << ' ' << v << '\n';

    fs::create_directories(rc.out_dir);
    data.vocab.dump(fs::path(rc.out_dir) / "entities.tsv", fs::path(rc.out_dir) / "relations.tsv");
    {
        std::ofstream out(fs::path(rc.out_dir) / "stats.txt");
        if (!out) throw DataError("prepare: cannot write stats under " + rc.out_dir);
        out << report.str();
    }
    std::cout << report.str();

    if (!expect_path.empty()) {
        const KvConfig expect = KvConfig::parse_file(expect_path);
        std::map<std::string, std::uint64_t> lookup(stats.begin(), stats.end());
        std::string mismatches;
        for (const auto& [key, value] : expect.items()) {
            auto it = lookup.find(key);
            if (it == lookup.end())
                throw DataError("prepare: expectation file names unknown statistic: " + key);
            const std::uint64_t want = expect.get_u64(key, 0);
            if (it->second != want)
                mismatches += "  " + key + ": expected " + std::to_string(want) + ", got " +
                              std::to_string(it->second) + "\n";
        }
        if (!mismatches.empty())
            throw DataError("prepare: statistics mismatch against " + expect_path + "\n" +
                            mismatches);
        std::cout << "expectations ok (" << expect.items().size() << " checked)\n";
    }
    return 0;
}

// ---------------------------------------------------------------------------
// train / finetune
// ---------------------------------------------------------------------------

void require_model_match(const ModelConfig& ckpt, const ModelConfig& cfg,
                         const std::string& path) {
    if (ckpt.d != cfg.d || ckpt.d_s != cfg.d_s || ckpt.variant != cfg.variant) {
        std::ostringstream os;
        os << "checkpoint " << path << " holds d=" << ckpt.d << " d_s=" << ckpt.d_s
           << " variant=" << to_string(ckpt.variant) << " but the config asks for d=" << cfg.d
           << " d_s=" << cfg.d_s << " variant=" << to_string(cfg.variant);
        throw ConfigError(os.str());
    }
}

template <class Real>
int run_train(const RunConfig& rc) {
    if (rc.data_dir.empty())
        throw ConfigError(std::string(to_string(rc.train.stage)) + ": data_dir is required");
    const Dataset data = Dataset::load(rc.data_dir);
    TrainConfig tc = rc.train;

    ModelState<Real> st;
    AdamState<Real> resume_storage;
    const AdamState<Real>* resume = nullptr;
    std::string resume_note;

    if (!rc.init_checkpoint.empty()) {
        Checkpoint<Real> ckpt = load_checkpoint<Real>(rc.init_checkpoint, &data.vocab);
        require_model_match(ckpt.state.cfg, rc.model, rc.init_checkpoint);
        if (tc.stage == Stage::pretrain && ckpt.stage != Stage::pretrain)
            throw ConfigError("train: init checkpoint " + rc.init_checkpoint +
                              " is a finetune checkpoint; use the finetune command");
        if (ckpt.stage == tc.stage) {
            tc.start_step = ckpt.step;
            if (ckpt.adam) {
                resume_storage = std::move(*ckpt.adam);
                resume = &resume_storage;
                resume_note = "resuming " + std::string(to_string(tc.stage)) + " at step " +
                              std::to_string(tc.start_step) + " with optimizer state";
            } else {
                resume_note = "resuming " + std::string(to_string(tc.stage)) + " at step " +
                              std::to_string(tc.start_step) +
                              " WITHOUT optimizer state (moments restart; trajectory will "
                              "differ from an unbroken run)";
            }
            tc.validate();
        } else {
            resume_note = "initializing finetune from pretrain checkpoint (step " +
                          std::to_string(ckpt.step) + ")";
        }
        st = std::move(ckpt.state);
    } else {
        if (tc.stage == Stage::finetune)
            throw ConfigError("finetune requires init_checkpoint pointing at a pretrain "
                              "checkpoint");
        st = init_model<Real>(rc.model, data.vocab.entity_count(), data.vocab.relation_count(),
                              tc.gamma, tc.seed);
    }

    fs::create_directories(rc.out_dir);
    const std::string stage_name = to_string(tc.stage);
    std::ofstream log_file(fs::path(rc.out_dir) / (stage_name + ".log"));
    TeeBuf tee(std::cout.rdbuf(), log_file ? log_file.rdbuf() : nullptr);
    std::ostream log(&tee);

    {
        std::ofstream cfg_echo(fs::path(rc.out_dir) / (stage_name + ".config"));
        cfg_echo << rc.to_kv().render();
    }
    log << stage_name << ": " << data.vocab.entity_count() << " entities, "
        << data.vocab.relation_count() << " relations, " << data.train.size()
        << " train triples, model " << to_string(rc.model.variant) << " d=" << rc.model.d
        << " d_s=" << rc.model.d_s << " (" << st.parameter_count() << " parameters), precision "
        << rc.precision << ", threads " << tc.threads << "\n";
    if (!resume_note.empty()) log << resume_note << "\n";

    TrainResult<Real> res = train(std::move(st), data, tc, &log, resume);

    const std::string ckpt_path =
        rc.checkpoint_out.empty() ? (fs::path(rc.out_dir) / (stage_name + ".ckpt")).string()
                                  : rc.checkpoint_out;
    save_checkpoint(res.best, ckpt_path);
    save_checkpoint(res.last, ckpt_path + ".last");
    log << "best checkpoint " << ckpt_path << " (valid MRR " << std::setprecision(6)
        << res.best_mrr << " at step " << res.best_step << ")\n";
    log << "last checkpoint " << ckpt_path << ".last (step " << res.last.step << ")\n";
    return 0;
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

template <class Real>
int run_eval(const RunConfig& rc) {
    if (rc.data_dir.empty()) throw ConfigError("eval: data_dir is required");
    if (rc.init_checkpoint.empty())
        throw ConfigError("eval: init_checkpoint (the model to evaluate) is required");

    const Dataset data = Dataset::load(rc.data_dir);
    const Checkpoint<Real> ckpt = load_checkpoint<Real>(rc.init_checkpoint, &data.vocab);
    const ModelState<Real>& st = ckpt.state;

    const RelationOpsBank<Real> bank(st);
    const ContextIndex ctx = build_context_index(data.train, st.entities.count);
    const FilterIndex filter = build_filter_index(data.train, data.valid, data.test);
    const PairCounts counts = build_pair_counts(data.train);

    ContextCache<Real> cache;
    const ContextCache<Real>* cache_ptr = nullptr;
    if (ckpt.stage == Stage::finetune) {
        refresh_context_cache(cache, st, bank, ctx);
        cache_ptr = &cache;
    }

    const TripleStore& split = rc.eval_split == "valid" ? data.valid : data.test;
    std::cout << "eval: " << rc.init_checkpoint << " (stage " << to_string(ckpt.stage)
              << ", step " << ckpt.step << ", " << to_string(st.cfg.variant) << " d=" << st.cfg.d
              << " d_s=" << st.cfg.d_s << ") on " << rc.eval_split << " split, "
              << (cache_ptr ? "context scoring" : "plain scoring") << ", threads "
              << rc.train.threads << "\n";

    const EvalReport rep = evaluate(st, bank, cache_ptr, split, filter, counts, rc.train.threads);
    std::cout << render_text(rep);
    if (!rc.report_out.empty()) {
        std::ofstream out(rc.report_out);
        if (!out) throw DataError("eval: cannot write report: " + rc.report_out);
        out << render_structured(rep);
        std::cout << "structured report written to " << rc.report_out << "\n";
    }
    return 0;
}

// ---------------------------------------------------------------------------
// verify
// ---------------------------------------------------------------------------

template <class Real>
int run_verify(const RunConfig& rc) {
    VerifyReport rep;
    structural_suite<float>(rep, rc.train.seed);

    ModelConfig cfg = rc.model;
    if (!rc.init_checkpoint.empty()) {
        const Checkpoint<Real> ckpt = load_checkpoint<Real>(rc.init_checkpoint, nullptr);
        cfg = ckpt.state.cfg;
        std::cout << "verify: checkpoint " << rc.init_checkpoint << " ("
                  << to_string(ckpt.stage) << ", step " << ckpt.step << ", "
                  << to_string(cfg.variant) << " d=" << cfg.d << " d_s=" << cfg.d_s << ")\n";
        model_suite(rep, ckpt.state, rc.train.seed);
    } else {
        std::cout << "verify: fresh " << to_string(cfg.variant) << " d=" << cfg.d
                  << " d_s=" << cfg.d_s << " model, seed " << rc.train.seed << "\n";
        const ModelState<Real> st =
            init_model<Real>(cfg, 32, 8, rc.train.gamma, rc.train.seed);
        model_suite(rep, st, rc.train.seed);
    }
    pattern_suite<Real>(rep, cfg, rc.train.seed);
    gradient_suite(rep, cfg.variant, rc.train.seed);

    rep.render(std::cout);
    std::size_t failures = 0;
    for (const CheckResult& c : rep.checks)
        if (!c.pass) ++failures;
    if (failures > 0) {
        std::cout << "verify: FAIL (" << failures << " of " << rep.checks.size()
                  << " checks)\n";
        return 5;
    }
    std::cout << "verify: PASS (" << rep.checks.size() << " checks)\n";
    return 0;
}

template <class Fn32, class Fn64>
int dispatch_precision(const RunConfig& rc, Fn32&& f32, Fn64&& f64) {
    return rc.precision == "f64" ? f64(rc) : f32(rc);
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Knowledge-graph embedding toolkit: orthogonal relation transforms with "
                 "optional graph context"};
    app.require_subcommand(1);

    CmdArgs prep, tr, ft, ev, vf;

    CLI::App* prepare_cmd =
        app.add_subcommand("prepare", "Load a dataset, write vocabulary artifacts and a "
                                      "statistics report");
    prep.add_config(prepare_cmd);
    prep.add_key(prepare_cmd, "data_dir", "dataset directory (train/valid/test.txt)");
    prep.add_key(prepare_cmd, "out_dir", "output directory for artifacts");
    prepare_cmd->add_option("--expect", prep.expect_path,
                            "key = value file of expected statistics; mismatch is an error");

    auto add_train_keys = [](CLI::App* cmd, CmdArgs& a) {
        a.add_config(cmd);
        a.add_key(cmd, "data_dir", "dataset directory");
        a.add_key(cmd, "out_dir", "output directory for logs and checkpoints");
        a.add_key(cmd, "checkpoint_out", "path for the best checkpoint");
        a.add_key(cmd, "init_checkpoint", "checkpoint to initialize or resume from");
        a.add_key(cmd, "d", "entity embedding dimension");
        a.add_key(cmd, "d_s", "sub-embedding (group) size");
        a.add_key(cmd, "variant", "ote | ote-noscale | lne | rotate");
        a.add_key(cmd, "lr", "learning rate");
        a.add_key(cmd, "gamma", "margin");
        a.add_key(cmd, "alpha", "adversarial temperature");
        a.add_key(cmd, "n_neg", "negatives per direction");
        a.add_key(cmd, "batch_size", "positives per step");
        a.add_key(cmd, "max_steps", "training steps");
        a.add_key(cmd, "valid_interval", "steps between validations");
        a.add_key(cmd, "patience", "validations without improvement before stopping");
        a.add_key(cmd, "neighbor_cap", "max sampled context neighbors per entity during "
                                       "training (0 = uncapped)");
        a.add_bool_key(cmd, "freeze_context_neighbors",
                       "do not propagate gradients into context neighbors");
        a.add_key(cmd, "seed", "root random seed");
        a.add_key(cmd, "threads", "worker threads (default: hardware)");
        a.add_key(cmd, "precision", "f32 | f64");
        a.add_bool_key(cmd, "deterministic", "force single-threaded fixed reduction order");
    };

    CLI::App* train_cmd = app.add_subcommand("train", "Pretrain a model (no graph context)");
    add_train_keys(train_cmd, tr);
    CLI::App* finetune_cmd =
        app.add_subcommand("finetune", "Finetune a pretrained model with graph context");
    add_train_keys(finetune_cmd, ft);

    CLI::App* eval_cmd = app.add_subcommand("eval", "Filtered link-prediction evaluation");
    ev.add_config(eval_cmd);
    ev.add_key(eval_cmd, "data_dir", "dataset directory");
    ev.add_alias(eval_cmd, "--checkpoint", "init_checkpoint", "checkpoint to evaluate");
    ev.add_alias(eval_cmd, "--split", "eval_split", "valid | test");
    ev.add_key(eval_cmd, "report_out", "path for the structured report");
    ev.add_key(eval_cmd, "threads", "worker threads (default: hardware)");
    ev.add_key(eval_cmd, "precision", "f32 | f64");
    ev.add_bool_key(eval_cmd, "deterministic", "force single-threaded evaluation");

    CLI::App* verify_cmd = app.add_subcommand(
        "verify", "Run structural, model, pattern, and gradient property suites");
    vf.add_config(verify_cmd);
    vf.add_alias(verify_cmd, "--checkpoint", "init_checkpoint",
                 "checkpoint whose state to verify (default: fresh random model)");
    vf.add_key(verify_cmd, "d", "entity embedding dimension for the fresh model");
    vf.add_key(verify_cmd, "d_s", "sub-embedding (group) size");
    vf.add_key(verify_cmd, "variant", "ote | ote-noscale | lne | rotate");
    vf.add_key(verify_cmd, "gamma", "init range scale for the fresh model");
    vf.add_key(verify_cmd, "seed", "root random seed");
    vf.add_key(verify_cmd, "precision", "f32 | f64");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (*prepare_cmd) {
            return cmd_prepare(resolve(prep.merged()), prep.expect_path);
        }
        if (*train_cmd) {
            KvConfig kv = tr.merged();
            enforce_stage(kv, Stage::pretrain);
            return dispatch_precision(resolve(kv), run_train<float>, run_train<double>);
        }
        if (*finetune_cmd) {
            KvConfig kv = ft.merged();
            enforce_stage(kv, Stage::finetune);
            return dispatch_precision(resolve(kv), run_train<float>, run_train<double>);
        }
        if (*eval_cmd) {
            return dispatch_precision(resolve(ev.merged()), run_eval<float>, run_eval<double>);
        }
        if (*verify_cmd) {
            return dispatch_precision(resolve(vf.merged()), run_verify<float>,
                                      run_verify<double>);
        }
        throw ConfigError("no command given");
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const NumericError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return 4;
    } catch (const InvariantError& e) {
        std::cerr << "invariant violation: " << e.what() << "\n";
        return 5;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
