#pragma once

#include <cstdint>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>
#include <string>
#include <string_view>

#include "ote/checkpoint.hpp"
#include "ote/errors.hpp"
#include "ote/model.hpp"
#include "ote/trainer.hpp"

namespace ote {

// Flat `key = value` text config: one pair per line, '#' comments, blank
// lines ignored. Rendering is sorted, so files are diffable and the
// parse/render round trip is exact.
class KvConfig {
public:
    KvConfig() = default;

    static KvConfig parse(std::istream& is, const std::string& origin = "<config>") {
        KvConfig cfg;
        std::string line;
        int lineno = 0;
        while (std::getline(is, line)) {
            ++lineno;
            const std::string_view stripped = strip(line);
            if (stripped.empty() || stripped.front() == '#') continue;
            const std::size_t eq = stripped.find('=');
            if (eq == std::string_view::npos)
                throw ConfigError(origin + ":" + std::to_string(lineno) +
                                  ": expected `key = value`");
            const std::string key(strip(stripped.substr(0, eq)));
            const std::string value(strip(stripped.substr(eq + 1)));
            if (key.empty())
                throw ConfigError(origin + ":" + std::to_string(lineno) + ": empty key");
            cfg.values_[key] = value;
        }
        return cfg;
    }

    static KvConfig parse_file(const std::string& path) {
        std::ifstream is(path);
        if (!is) throw ConfigError("cannot open config file: " + path);
        return parse(is, path);
    }

    std::string render() const {
        std::ostringstream os;
        for (const auto& [k, v] : values_) os << k << " = " << v << '\n';
        return os.str();
    }

    bool has(const std::string& key) const { return values_.count(key) > 0; }
    void set(const std::string& key, const std::string& value) { values_[key] = value; }

    const std::string& get_string(const std::string& key) const {
        auto it = values_.find(key);
        if (it == values_.end()) throw ConfigError("missing config key: " + key);
        return it->second;
    }
    std::string get_string(const std::string& key, const std::string& fallback) const {
        auto it = values_.find(key);
        return it == values_.end() ? fallback : it->second;
    }

    std::int64_t get_int(const std::string& key, std::int64_t fallback) const {
        if (!has(key)) return fallback;
        return parse_int(get_string(key), key);
    }
    std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const {
        if (!has(key)) return fallback;
        const std::string& s = get_string(key);
        try {
            std::size_t pos = 0;
            const std::uint64_t v = std::stoull(s, &pos);
            if (pos != s.size()) throw std::invalid_argument(s);
            return v;
        } catch (const std::exception&) {
            throw ConfigError("config key " + key + ": not an unsigned integer: " + s);
        }
    }
    double get_double(const std::string& key, double fallback) const {
        if (!has(key)) return fallback;
        const std::string& s = get_string(key);
        try {
            std::size_t pos = 0;
            const double v = std::stod(s, &pos);
            if (pos != s.size()) throw std::invalid_argument(s);
            return v;
        } catch (const std::exception&) {
            throw ConfigError("config key " + key + ": not a number: " + s);
        }
    }
    bool get_bool(const std::string& key, bool fallback) const {
        if (!has(key)) return fallback;
        const std::string& s = get_string(key);
        if (s == "true" || s == "1") return true;
        if (s == "false" || s == "0") return false;
        throw ConfigError("config key " + key + ": expected true/false: " + s);
    }

    const std::map<std::string, std::string>& items() const { return values_; }

    friend bool operator==(const KvConfig&, const KvConfig&) = default;

private:
    static std::string_view strip(std::string_view s) {
        while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r'))
            s.remove_prefix(1);
        while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r'))
            s.remove_suffix(1);
        return s;
    }
    static std::int64_t parse_int(const std::string& s, const std::string& key) {
        try {
            std::size_t pos = 0;
            const std::int64_t v = std::stoll(s, &pos);
            if (pos != s.size()) throw std::invalid_argument(s);
            return v;
        } catch (const std::exception&) {
            throw ConfigError("config key " + key + ": not an integer: " + s);
        }
    }

    std::map<std::string, std::string> values_;
};

inline const std::map<std::string, std::string>& known_run_keys() {
    static const std::map<std::string, std::string> keys = {
        {"data_dir", "dataset directory with train.txt/valid.txt/test.txt"},
        {"out_dir", "output directory for checkpoints and reports"},
        {"checkpoint_out", "checkpoint file to write"},
        {"init_checkpoint", "checkpoint to start from (required for finetune)"},
        {"eval_split", "split to evaluate: valid or test"},
        {"report_out", "structured report output path (empty = stdout only)"},
        {"d", "entity embedding dimension"},
        {"d_s", "sub-embedding (group) dimension"},
        {"variant", "ote | ote-noscale | lne | rotate"},
        {"stage", "pretrain | finetune"},
        {"lr", "learning rate"},
        {"gamma", "margin"},
        {"alpha", "adversarial temperature"},
        {"n_neg", "negatives per positive per direction"},
        {"batch_size", "positives per step"},
        {"max_steps", "optimization steps"},
        {"valid_interval", "steps between validations"},
        {"patience", "non-improving validations before early stop"},
        {"neighbor_cap", "max sampled context neighbors per side during training"},
        {"freeze_context_neighbors", "treat neighbor projections as constants in finetune"},
        {"seed", "root RNG seed"},
        {"threads", "worker threads (0 = hardware)"},
        {"deterministic", "force single-threaded, fixed-order execution"},
        {"precision", "f32 | f64"},
    };
    return keys;
}

// Everything a CLI run needs; file form is the flat key-value format above.
struct RunConfig {
    std::string data_dir;
    std::string out_dir = ".";
    std::string checkpoint_out;
    std::string init_checkpoint;
    std::string eval_split = "test";
    std::string report_out;
    ModelConfig model;
    TrainConfig train;
    bool deterministic = false;
    std::string precision = "f32";

    void validate() const {
        model.validate();
        train.validate();
        if (precision != "f32" && precision != "f64")
            throw ConfigError("precision must be f32 or f64");
        if (eval_split != "valid" && eval_split != "test")
            throw ConfigError("eval_split must be valid or test");
    }

    KvConfig to_kv() const {
        KvConfig kv;
        kv.set("data_dir", data_dir);
        kv.set("out_dir", out_dir);
        kv.set("checkpoint_out", checkpoint_out);
        kv.set("init_checkpoint", init_checkpoint);
        kv.set("eval_split", eval_split);
        kv.set("report_out", report_out);
        kv.set("d", std::to_string(model.d));
        kv.set("d_s", std::to_string(model.d_s));
        kv.set("variant", to_string(model.variant));
        kv.set("stage", to_string(train.stage));
        kv.set("lr", format_double(train.lr));
        kv.set("gamma", format_double(train.gamma));
        kv.set("alpha", format_double(train.alpha));
        kv.set("n_neg", std::to_string(train.n_neg));
        kv.set("batch_size", std::to_string(train.batch_size));
        kv.set("max_steps", std::to_string(train.max_steps));
        kv.set("valid_interval", std::to_string(train.valid_interval));
        kv.set("patience", std::to_string(train.patience));
        kv.set("neighbor_cap", std::to_string(train.neighbor_cap));
        kv.set("freeze_context_neighbors", train.freeze_context_neighbors ? "true" : "false");
        kv.set("seed", std::to_string(train.seed));
        kv.set("threads", std::to_string(train.threads));
        kv.set("deterministic", deterministic ? "true" : "false");
        kv.set("precision", precision);
        return kv;
    }

    static RunConfig from_kv(const KvConfig& kv) {
        for (const auto& [k, v] : kv.items())
            if (known_run_keys().count(k) == 0) throw ConfigError("unknown config key: " + k);
        RunConfig rc;
        rc.data_dir = kv.get_string("data_dir", "");
        rc.out_dir = kv.get_string("out_dir", ".");
        rc.checkpoint_out = kv.get_string("checkpoint_out", "");
        rc.init_checkpoint = kv.get_string("init_checkpoint", "");
        rc.eval_split = kv.get_string("eval_split", "test");
        rc.report_out = kv.get_string("report_out", "");
        rc.model.d = static_cast<int>(kv.get_int("d", rc.model.d));
        rc.model.d_s = static_cast<int>(kv.get_int("d_s", rc.model.d_s));
        rc.model.variant = parse_variant(kv.get_string("variant", "ote"));
        rc.train.stage = parse_stage(kv.get_string("stage", "pretrain"));
        rc.train.lr = kv.get_double("lr", rc.train.lr);
        rc.train.gamma = kv.get_double("gamma", rc.train.gamma);
        rc.train.alpha = kv.get_double("alpha", rc.train.alpha);
        rc.train.n_neg = static_cast<int>(kv.get_int("n_neg", rc.train.n_neg));
        rc.train.batch_size = static_cast<int>(kv.get_int("batch_size", rc.train.batch_size));
        rc.train.max_steps = kv.get_int("max_steps", rc.train.max_steps);
        rc.train.valid_interval = kv.get_int("valid_interval", rc.train.valid_interval);
        rc.train.patience = static_cast<int>(kv.get_int("patience", rc.train.patience));
        rc.train.neighbor_cap =
            static_cast<int>(kv.get_int("neighbor_cap", rc.train.neighbor_cap));
        rc.train.freeze_context_neighbors =
            kv.get_bool("freeze_context_neighbors", rc.train.freeze_context_neighbors);
        rc.train.seed = kv.get_u64("seed", rc.train.seed);
        rc.train.threads = static_cast<int>(kv.get_int("threads", rc.train.threads));
        rc.deterministic = kv.get_bool("deterministic", rc.deterministic);
        rc.precision = kv.get_string("precision", rc.precision);
        return rc;
    }

private:
    static std::string format_double(double v) {
        std::ostringstream os;
        os << std::setprecision(17) << v;
        return os.str();
    }
};

} // namespace ote
