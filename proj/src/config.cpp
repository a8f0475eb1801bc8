#include "ccm/config.hpp"

#include <fstream>
#include <set>

namespace ccm {

namespace {

using nlohmann::json;

void reject_unknown_keys(const json& j, const std::set<std::string>& known, const char* where) {
    if (!j.is_object()) {
        throw ConfigError(std::string(where) + ": expected a JSON object");
    }
    for (const auto& item : j.items()) {
        if (known.find(item.key()) == known.end()) {
            throw ConfigError(std::string("unknown key '") + item.key() + "' in " + where);
        }
    }
}

template <typename T>
void read_field(const json& j, const char* key, T& out, const char* where) {
    if (!j.contains(key)) return;
    try {
        out = j.at(key).get<T>();
    } catch (const json::exception&) {
        throw ConfigError(std::string(where) + ": field '" + key + "' has the wrong type");
    }
}

json read_file_json(const std::filesystem::path& path, const char* what) {
    std::ifstream is(path);
    if (!is) throw IoError(std::string("cannot open ") + what + " file " + path.string());
    json j;
    try {
        is >> j;
    } catch (const json::exception& e) {
        throw ConfigError(std::string("malformed ") + what + " file " + path.string() + ": " +
                          e.what());
    }
    return j;
}

}  // namespace

std::string to_string(PredictionMode mode) {
    return mode == PredictionMode::classifier ? "classifier" : "frontdoor";
}

PredictionMode prediction_mode_from_string(const std::string& name) {
    if (name == "classifier") return PredictionMode::classifier;
    if (name == "frontdoor") return PredictionMode::frontdoor;
    throw ConfigError("prediction_mode must be 'classifier' or 'frontdoor', got '" + name + "'");
}

void TrainConfig::validate() const {
    if (!(tau > 0.0)) throw ConfigError("TrainConfig: tau must be positive");
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("TrainConfig: alpha outside [0, 1]");
    if (!(learning_rate > 0.0)) throw ConfigError("TrainConfig: learning_rate must be positive");
    if (epochs < 0) throw ConfigError("TrainConfig: epochs must be >= 0");
    if (batch_size_per_domain < 1) {
        throw ConfigError("TrainConfig: batch_size_per_domain must be >= 1");
    }
    if (queue_multiple < 1) throw ConfigError("TrainConfig: queue_multiple must be >= 1");
    if (!loss_flags.any()) throw ConfigError("TrainConfig: at least one loss flag must be true");
    if (!(val_fraction > 0.0 && val_fraction < 1.0)) {
        throw ConfigError("TrainConfig: val_fraction outside (0, 1)");
    }
}

TrainConfig parse_train_config(const nlohmann::json& j) {
    static const std::set<std::string> known = {
        "tau",        "alpha",          "learning_rate",   "epochs",       "batch_size_per_domain",
        "queue_multiple", "loss_flags", "prediction_mode", "val_fraction", "seed"};
    reject_unknown_keys(j, known, "train config");

    TrainConfig c;
    read_field(j, "tau", c.tau, "train config");
    read_field(j, "alpha", c.alpha, "train config");
    read_field(j, "learning_rate", c.learning_rate, "train config");
    read_field(j, "epochs", c.epochs, "train config");
    read_field(j, "batch_size_per_domain", c.batch_size_per_domain, "train config");
    read_field(j, "queue_multiple", c.queue_multiple, "train config");
    if (j.contains("loss_flags")) {
        const json& f = j.at("loss_flags");
        reject_unknown_keys(f, {"teach", "learn", "cs"}, "loss_flags");
        read_field(f, "teach", c.loss_flags.teach, "loss_flags");
        read_field(f, "learn", c.loss_flags.learn, "loss_flags");
        read_field(f, "cs", c.loss_flags.cs, "loss_flags");
    }
    if (j.contains("prediction_mode")) {
        std::string mode;
        read_field(j, "prediction_mode", mode, "train config");
        c.prediction_mode = prediction_mode_from_string(mode);
    }
    read_field(j, "val_fraction", c.val_fraction, "train config");
    read_field(j, "seed", c.seed, "train config");
    c.validate();
    return c;
}

DatasetSpec parse_dataset_spec(const nlohmann::json& j) {
    static const std::set<std::string> known = {
        "num_classes", "num_domains",        "core_dim", "spurious_dim",
        "spurious_agreement", "noise_std",   "samples_per_domain", "seed"};
    reject_unknown_keys(j, known, "dataset spec");

    DatasetSpec s;
    read_field(j, "num_classes", s.num_classes, "dataset spec");
    read_field(j, "num_domains", s.num_domains, "dataset spec");
    read_field(j, "core_dim", s.core_dim, "dataset spec");
    read_field(j, "spurious_dim", s.spurious_dim, "dataset spec");
    read_field(j, "spurious_agreement", s.spurious_agreement, "dataset spec");
    read_field(j, "noise_std", s.noise_std, "dataset spec");
    read_field(j, "samples_per_domain", s.samples_per_domain, "dataset spec");
    read_field(j, "seed", s.seed, "dataset spec");
    s.validate();
    return s;
}

TrainConfig load_train_config(const std::filesystem::path& path) {
    return parse_train_config(read_file_json(path, "train config"));
}

DatasetSpec load_dataset_spec(const std::filesystem::path& path) {
    return parse_dataset_spec(read_file_json(path, "dataset spec"));
}

nlohmann::json to_json(const LossFlags& flags) {
    return nlohmann::json{{"teach", flags.teach}, {"learn", flags.learn}, {"cs", flags.cs}};
}

nlohmann::json to_json(const TrainConfig& c) {
    return nlohmann::json{{"tau", c.tau},
                          {"alpha", c.alpha},
                          {"learning_rate", c.learning_rate},
                          {"epochs", c.epochs},
                          {"batch_size_per_domain", c.batch_size_per_domain},
                          {"queue_multiple", c.queue_multiple},
                          {"loss_flags", to_json(c.loss_flags)},
                          {"prediction_mode", to_string(c.prediction_mode)},
                          {"val_fraction", c.val_fraction},
                          {"seed", c.seed}};
}

nlohmann::json to_json(const DatasetSpec& s) {
    return nlohmann::json{{"num_classes", s.num_classes},
                          {"num_domains", s.num_domains},
                          {"core_dim", s.core_dim},
                          {"spurious_dim", s.spurious_dim},
                          {"spurious_agreement", s.spurious_agreement},
                          {"noise_std", s.noise_std},
                          {"samples_per_domain", s.samples_per_domain},
                          {"seed", s.seed}};
}

std::string loss_flags_to_string(const LossFlags& flags) {
    std::string out;
    if (flags.teach) out += "teach";
    if (flags.learn) out += out.empty() ? "learn" : "+learn";
    if (flags.cs) out += out.empty() ? "cs" : "+cs";
    if (out.empty()) out = "none";
    return out;
}

LossFlags loss_flags_from_string(const std::string& flags) {
    LossFlags out{false, false, false};
    auto apply = [&out](const std::string& name) {
        if (name.empty()) return;
        if (name == "teach") {
            out.teach = true;
        } else if (name == "learn") {
            out.learn = true;
        } else if (name == "cs") {
            out.cs = true;
        } else {
            throw ConfigError("unknown loss flag '" + name + "' (expected teach, learn, cs)");
        }
    };
    std::string buffer;
    for (char ch : flags) {
        if (ch == ',' || ch == '+' || ch == ' ') {
            apply(buffer);
            buffer.clear();
        } else {
            buffer.push_back(ch);
        }
    }
    apply(buffer);
    if (!out.any()) throw ConfigError("loss flags '" + flags + "' enable nothing");
    return out;
}

}  // namespace ccm
