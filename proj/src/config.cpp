#include "xmd/config.hpp"

#include <yaml-cpp/yaml.h>

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <sstream>

namespace xmd {

namespace {

using Cfg = ExperimentConfig;

std::string canon(const std::string& v) { return v; }
std::string canon(bool v) { return v ? "true" : "false"; }
std::string canon(int v) { return std::to_string(v); }
std::string canon(std::int64_t v) { return std::to_string(v); }
std::string canon(std::uint64_t v) { return std::to_string(v); }
// Shortest representation that reads back to the same double.
std::string canon(double v) {
    char buf[32];
    for (int precision = 15; precision <= 17; ++precision) {
        std::snprintf(buf, sizeof(buf), "%.*g", precision, v);
        if (std::strtod(buf, nullptr) == v) break;
    }
    return buf;
}
template <typename T>
std::string canon(const std::vector<T>& v) {
    std::string out = "[";
    for (std::size_t i = 0; i < v.size(); ++i) out += (i ? ", " : "") + canon(v[i]);
    return out + "]";
}

template <typename T>
const char* type_name() {
    if constexpr (std::is_same_v<T, bool>) return "a boolean";
    else if constexpr (std::is_same_v<T, int> || std::is_same_v<T, std::int64_t>) return "an integer";
    else if constexpr (std::is_same_v<T, std::uint64_t>) return "a non-negative integer";
    else if constexpr (std::is_same_v<T, double>) return "a number";
    else if constexpr (std::is_same_v<T, std::string>) return "a string";
    else return "a list";
}

struct Field {
    std::string key;
    std::function<void(Cfg&, const YAML::Node&)> set;  // throws YAML::Exception on type mismatch
    std::function<std::string(const Cfg&)> show;
    std::function<void(const Cfg&, YAML::Emitter&)> emit;
    const char* type;
};

template <typename T, typename Access>
Field field(std::string key, Access access) {
    Field f;
    f.key = std::move(key);
    f.type = type_name<T>();
    f.set = [access](Cfg& c, const YAML::Node& n) {
        if constexpr (std::is_same_v<T, std::string>) {
            if (!n.IsScalar()) throw YAML::TypedBadConversion<std::string>(n.Mark());
        } else if constexpr (!std::is_arithmetic_v<T>) {
            if (!n.IsSequence()) throw YAML::TypedBadConversion<T>(n.Mark());
        }
        access(c) = n.as<T>();
    };
    f.show = [access](const Cfg& c) { return canon(access(c)); };
    f.emit = [access](const Cfg& c, YAML::Emitter& out) {
        const auto& v = access(c);
        if constexpr (std::is_same_v<T, double>) {
            out << canon(v);
        } else if constexpr (std::is_same_v<T, std::vector<double>>) {
            out << YAML::Flow << YAML::BeginSeq;
            for (double x : v) out << canon(x);
            out << YAML::EndSeq;
        } else if constexpr (std::is_arithmetic_v<T> || std::is_same_v<T, std::string>) {
            out << v;
        } else {
            out << YAML::Flow << v;
        }
    };
    return f;
}

#define XMD_FIELD(T, key, member) field<T>(key, [](auto& c) -> auto& { return c.member; })

const std::vector<Field>& schema() {
    static const std::vector<Field> fields = {
        XMD_FIELD(std::string, "output_dir", output_dir),
        XMD_FIELD(std::vector<std::int64_t>, "seeds", seeds),

        XMD_FIELD(std::string, "dataset.path", dataset.path),
        XMD_FIELD(std::uint64_t, "dataset.seed", dataset.seed),
        XMD_FIELD(int, "dataset.synth.classes", dataset.synth.classes),
        XMD_FIELD(int, "dataset.synth.n", dataset.synth.n),
        XMD_FIELD(int, "dataset.synth.vocab_per_class", dataset.synth.vocab_per_class),
        XMD_FIELD(int, "dataset.synth.image_motifs_per_class", dataset.synth.image_motifs_per_class),
        XMD_FIELD(int, "dataset.synth.raw_width", dataset.synth.raw_width),
        XMD_FIELD(int, "dataset.synth.raw_height", dataset.synth.raw_height),
        XMD_FIELD(double, "dataset.synth.text_noise", dataset.synth.text_noise),
        XMD_FIELD(double, "dataset.synth.image_noise", dataset.synth.image_noise),

        XMD_FIELD(std::uint64_t, "classifier.seed", classifier.seed),
        XMD_FIELD(int, "classifier.vocab_size", classifier.vocab_size),
        XMD_FIELD(std::string, "classifier.averaging", classifier.averaging),
        XMD_FIELD(int, "classifier.text.embed_dim", classifier.text.embed_dim),
        XMD_FIELD(int, "classifier.text.hidden", classifier.text.hidden),
        XMD_FIELD(int, "classifier.text.output_dim", classifier.text.output_dim),
        XMD_FIELD(double, "classifier.text.lr", classifier.text_train.lr),
        XMD_FIELD(int, "classifier.text.patience", classifier.text_train.patience),
        XMD_FIELD(int, "classifier.text.max_epochs", classifier.text_train.max_epochs),
        XMD_FIELD(int, "classifier.text.batch_size", classifier.text_train.batch_size),
        XMD_FIELD(int, "classifier.image.conv_channels", classifier.image.conv_channels),
        XMD_FIELD(int, "classifier.image.hidden", classifier.image.hidden),
        XMD_FIELD(int, "classifier.image.output_dim", classifier.image.output_dim),
        XMD_FIELD(double, "classifier.image.lr", classifier.image_train.lr),
        XMD_FIELD(int, "classifier.image.patience", classifier.image_train.patience),
        XMD_FIELD(int, "classifier.image.max_epochs", classifier.image_train.max_epochs),
        XMD_FIELD(int, "classifier.image.batch_size", classifier.image_train.batch_size),
        XMD_FIELD(bool, "classifier.image.freeze_backbone", classifier.image_train.freeze_backbone),
        XMD_FIELD(std::vector<int>, "classifier.fusion.hidden", classifier.fusion.hidden),
        XMD_FIELD(int, "classifier.fusion.input_dim", classifier.fusion.input_dim),
        XMD_FIELD(double, "classifier.fusion.lr", classifier.fusion_train.lr),
        XMD_FIELD(int, "classifier.fusion.patience", classifier.fusion_train.patience),
        XMD_FIELD(int, "classifier.fusion.max_epochs", classifier.fusion_train.max_epochs),
        XMD_FIELD(int, "classifier.fusion.batch_size", classifier.fusion_train.batch_size),

        XMD_FIELD(int, "keywords.k", keywords.text.k),
        XMD_FIELD(int, "keywords.ngram", keywords.text.ngram),
        XMD_FIELD(double, "keywords.dedup_threshold", keywords.text.dedup_threshold),
        XMD_FIELD(int, "keywords.window", keywords.text.window),
        XMD_FIELD(double, "keywords.min_area_frac", keywords.min_area_frac),
        XMD_FIELD(std::string, "keywords.label_vocab", keywords.label_vocab),

        XMD_FIELD(int, "generator.vocab_size", generator.vocab_size),
        XMD_FIELD(int, "generator.embed_dim", generator.lm.embed_dim),
        XMD_FIELD(int, "generator.hidden", generator.lm.hidden),
        XMD_FIELD(int, "generator.max_rounds", generator.lm.max_rounds),
        XMD_FIELD(int, "generator.max_len", generator.lm.max_len),
        XMD_FIELD(int, "generator.stage1.epochs", generator.stage1_epochs),
        XMD_FIELD(double, "generator.stage1.lr", generator.stage1_lr),
        XMD_FIELD(int, "generator.stage1.batch_size", generator.stage1_batch_size),
        XMD_FIELD(int, "generator.stage2.epochs", generator.stage2_epochs),
        XMD_FIELD(double, "generator.stage2.lr", generator.stage2_lr),
        XMD_FIELD(double, "generator.lambda", generator.lambda),
        XMD_FIELD(std::string, "generator.adv_objective", generator.adv_objective),
        XMD_FIELD(bool, "generator.report_alt_objective", generator.report_alt_objective),
        XMD_FIELD(std::string, "generator.decode", generator.decode),

        XMD_FIELD(std::vector<std::string>, "baselines.methods", baselines.methods),
        XMD_FIELD(int, "baselines.lm_max_new_words", baselines.lm_max_new_words),
        XMD_FIELD(int, "baselines.caption_max_objects", baselines.caption_max_objects),

        XMD_FIELD(int, "metrics.joint.embed_dim", metrics.joint.embed_dim),
        XMD_FIELD(int, "metrics.joint.image_hidden", metrics.joint.image_hidden),
        XMD_FIELD(int, "metrics.joint.joint_dim", metrics.joint.joint_dim),
        XMD_FIELD(double, "metrics.joint.temperature", metrics.joint.temperature),
        XMD_FIELD(double, "metrics.joint.lr", metrics.joint.lr),
        XMD_FIELD(int, "metrics.joint.epochs", metrics.joint.epochs),
        XMD_FIELD(int, "metrics.joint.batch_size", metrics.joint.batch_size),
        XMD_FIELD(int, "metrics.correspondence.neg_ratio", metrics.correspondence.neg_ratio),
        XMD_FIELD(std::vector<int>, "metrics.correspondence.hidden", metrics.correspondence.hidden),
        XMD_FIELD(double, "metrics.correspondence.lr", metrics.correspondence.lr),
        XMD_FIELD(int, "metrics.correspondence.patience", metrics.correspondence.patience),
        XMD_FIELD(int, "metrics.correspondence.max_epochs", metrics.correspondence.max_epochs),
        XMD_FIELD(int, "metrics.correspondence.batch_size", metrics.correspondence.batch_size),
        XMD_FIELD(double, "metrics.correspondence.holdout_fraction", metrics.correspondence.holdout_fraction),
        XMD_FIELD(int, "metrics.topics.n_topics", metrics.topics.n_topics),
        XMD_FIELD(double, "metrics.topics.alpha", metrics.topics.alpha),
        XMD_FIELD(double, "metrics.topics.beta", metrics.topics.beta),
        XMD_FIELD(int, "metrics.topics.iterations", metrics.topics.iterations),
        XMD_FIELD(int, "metrics.topics.inference_iterations", metrics.topics.inference_iterations),
        XMD_FIELD(int, "metrics.length_target", metrics.length_target),

        XMD_FIELD(std::vector<double>, "sweep.lambdas", sweep_lambdas),
        XMD_FIELD(std::vector<std::string>, "ablation.modes", ablation_modes),
    };
    return fields;
}

#undef XMD_FIELD

const Field* find_field(const std::string& key) {
    for (const auto& f : schema())
        if (f.key == key) return &f;
    return nullptr;
}

// Leaves of a YAML document keyed by dotted path. Sequences are leaves.
void flatten(const YAML::Node& node, const std::string& prefix, std::vector<std::pair<std::string, YAML::Node>>& out,
             std::vector<std::string>& problems) {
    if (node.IsMap()) {
        for (const auto& kv : node) {
            const auto key = kv.first.as<std::string>();
            flatten(kv.second, prefix.empty() ? key : prefix + "." + key, out, problems);
        }
    } else if (node.IsNull() && prefix.empty()) {
        // empty document
    } else {
        out.emplace_back(prefix, node);
    }
}

void apply(Cfg& cfg, const std::string& key, const YAML::Node& value, const std::string& origin, std::vector<std::string>& problems) {
    const Field* f = find_field(key);
    if (f == nullptr) {
        problems.push_back(origin + "unknown key '" + key + "'");
        return;
    }
    try {
        f->set(cfg, value);
    } catch (const YAML::Exception&) {
        problems.push_back(origin + key + ": expected " + f->type);
    }
}

template <typename T>
bool one_of(const T& v, std::initializer_list<T> options) {
    for (const auto& o : options)
        if (v == o) return true;
    return false;
}

}  // namespace

ConfigError::ConfigError(std::vector<std::string> problems)
    : Error([&] {
          std::string msg = "invalid configuration:";
          for (const auto& p : problems) msg += "\n  - " + p;
          return msg;
      }()),
      problems_(std::move(problems)) {}

ExperimentConfig parse_config(const std::string& yaml_text, const std::vector<std::string>& overrides) {
    Cfg cfg;
    std::vector<std::string> problems;
    YAML::Node doc;
    try {
        doc = YAML::Load(yaml_text);
    } catch (const YAML::Exception& e) {
        throw ConfigError({std::string("syntax error: ") + e.what()});
    }
    if (!doc.IsNull() && !doc.IsMap()) throw ConfigError({"top level must be a mapping"});
    std::vector<std::pair<std::string, YAML::Node>> leaves;
    flatten(doc, "", leaves, problems);
    for (const auto& [key, node] : leaves) apply(cfg, key, node, "", problems);

    for (const auto& o : overrides) {
        const auto eq = o.find('=');
        if (eq == std::string::npos || eq == 0) {
            problems.push_back("override '" + o + "' is not key=value");
            continue;
        }
        YAML::Node value;
        try {
            value = YAML::Load(o.substr(eq + 1));
        } catch (const YAML::Exception&) {
            problems.push_back("override '" + o + "': value is not valid YAML");
            continue;
        }
        if (value.IsNull()) value = YAML::Node(std::string());
        apply(cfg, o.substr(0, eq), value, "override: ", problems);
    }

    try {
        validate_config(cfg);
    } catch (const ConfigError& e) {
        problems.insert(problems.end(), e.problems().begin(), e.problems().end());
    }
    if (!problems.empty()) throw ConfigError(std::move(problems));
    return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path, const std::vector<std::string>& overrides) {
    std::ifstream in(path);
    if (!in) throw ConfigError({"cannot read config file " + path.string()});
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str(), overrides);
}

void validate_config(const ExperimentConfig& c) {
    std::vector<std::string> p;
    auto positive = [&](const char* key, double v) {
        if (!(v > 0)) p.push_back(std::string(key) + " must be positive");
    };
    auto non_negative = [&](const char* key, double v) {
        if (!(v >= 0)) p.push_back(std::string(key) + " must be non-negative");
    };
    auto fraction = [&](const char* key, double v) {
        if (!(v >= 0 && v <= 1)) p.push_back(std::string(key) + " must be in [0, 1]");
    };

    if (c.output_dir.empty()) p.push_back("output_dir must not be empty");
    if (c.seeds.empty()) p.push_back("seeds must not be empty");
    if (!c.dataset.path.empty() && !std::filesystem::exists(c.dataset.path))
        p.push_back("dataset.path: file not found: " + c.dataset.path);
    if (c.dataset.path.empty()) {
        if (c.dataset.synth.classes < 2) p.push_back("dataset.synth.classes must be >= 2");
        if (c.dataset.synth.n < 30) p.push_back("dataset.synth.n must be >= 30");
        fraction("dataset.synth.text_noise", c.dataset.synth.text_noise);
        fraction("dataset.synth.image_noise", c.dataset.synth.image_noise);
    }

    positive("classifier.vocab_size", c.classifier.vocab_size);
    if (!one_of<std::string>(c.classifier.averaging, {"macro", "micro", "weighted"}))
        p.push_back("classifier.averaging must be macro, micro or weighted");
    const std::pair<std::string, const TrainConfig*> trainers[] = {
        {"classifier.text", &c.classifier.text_train},
        {"classifier.image", &c.classifier.image_train},
        {"classifier.fusion", &c.classifier.fusion_train},
    };
    for (const auto& [section, t] : trainers) {
        if (!(t->lr > 0)) p.push_back(section + ".lr must be positive");
        if (t->patience < 0) p.push_back(section + ".patience must be non-negative");
        if (t->max_epochs < 1) p.push_back(section + ".max_epochs must be >= 1");
        if (t->batch_size < 1) p.push_back(section + ".batch_size must be >= 1");
    }
    positive("classifier.text.embed_dim", c.classifier.text.embed_dim);
    positive("classifier.text.output_dim", c.classifier.text.output_dim);
    positive("classifier.image.conv_channels", c.classifier.image.conv_channels);
    positive("classifier.image.output_dim", c.classifier.image.output_dim);
    const int fused = c.classifier.text.output_dim + c.classifier.image.output_dim;
    if (c.classifier.fusion.input_dim != 0 && c.classifier.fusion.input_dim != fused)
        p.push_back("classifier.fusion.input_dim (" + std::to_string(c.classifier.fusion.input_dim) +
                    ") does not match text + image output dims (" + std::to_string(fused) + ")");

    positive("keywords.k", c.keywords.text.k);
    if (c.keywords.text.ngram != 1) p.push_back("keywords.ngram: only unigram keywords are supported");
    fraction("keywords.dedup_threshold", c.keywords.text.dedup_threshold);
    positive("keywords.window", c.keywords.text.window);
    fraction("keywords.min_area_frac", c.keywords.min_area_frac);
    if (!c.keywords.label_vocab.empty() && !std::filesystem::exists(c.keywords.label_vocab))
        p.push_back("keywords.label_vocab: file not found: " + c.keywords.label_vocab);

    const auto& g = c.generator;
    positive("generator.vocab_size", g.vocab_size);
    positive("generator.embed_dim", g.lm.embed_dim);
    positive("generator.hidden", g.lm.hidden);
    non_negative("generator.max_rounds", g.lm.max_rounds);
    positive("generator.max_len", g.lm.max_len);
    non_negative("generator.stage1.epochs", g.stage1_epochs);
    positive("generator.stage1.lr", g.stage1_lr);
    positive("generator.stage1.batch_size", g.stage1_batch_size);
    non_negative("generator.stage2.epochs", g.stage2_epochs);
    positive("generator.stage2.lr", g.stage2_lr);
    non_negative("generator.lambda", g.lambda);
    if (!one_of<std::string>(g.adv_objective, {"paper_bce", "maximize_incorrect"}))
        p.push_back("generator.adv_objective must be paper_bce or maximize_incorrect");
    if (!one_of<std::string>(g.decode, {"greedy", "sample"})) p.push_back("generator.decode must be greedy or sample");

    if (c.baselines.methods.empty()) p.push_back("baselines.methods must not be empty");
    for (const auto& m : c.baselines.methods) {
        if (m == kOriginalMethod || m == "xmd") continue;
        try {
            parse_baseline_method(m);
        } catch (const InvalidArgument&) {
            p.push_back("baselines.methods: unknown method '" + m + "'");
        }
    }
    positive("baselines.lm_max_new_words", c.baselines.lm_max_new_words);
    positive("baselines.caption_max_objects", c.baselines.caption_max_objects);

    positive("metrics.joint.joint_dim", c.metrics.joint.joint_dim);
    positive("metrics.joint.temperature", c.metrics.joint.temperature);
    non_negative("metrics.joint.epochs", c.metrics.joint.epochs);
    positive("metrics.joint.batch_size", c.metrics.joint.batch_size);
    positive("metrics.correspondence.neg_ratio", c.metrics.correspondence.neg_ratio);
    positive("metrics.correspondence.lr", c.metrics.correspondence.lr);
    positive("metrics.correspondence.max_epochs", c.metrics.correspondence.max_epochs);
    positive("metrics.correspondence.batch_size", c.metrics.correspondence.batch_size);
    if (!(c.metrics.correspondence.holdout_fraction >= 0 && c.metrics.correspondence.holdout_fraction < 1))
        p.push_back("metrics.correspondence.holdout_fraction must be in [0, 1)");
    positive("metrics.topics.n_topics", c.metrics.topics.n_topics);
    positive("metrics.topics.alpha", c.metrics.topics.alpha);
    positive("metrics.topics.beta", c.metrics.topics.beta);
    positive("metrics.topics.iterations", c.metrics.topics.iterations);
    positive("metrics.length_target", c.metrics.length_target);

    if (c.sweep_lambdas.empty()) p.push_back("sweep.lambdas must not be empty");
    for (double l : c.sweep_lambdas)
        if (!(l >= 0)) p.push_back("sweep.lambdas: " + canon(l) + " is negative");
    if (c.ablation_modes.empty()) p.push_back("ablation.modes must not be empty");
    for (const auto& m : c.ablation_modes)
        if (!one_of<std::string>(m, {"plain", "adv", "full"})) p.push_back("ablation.modes: unknown mode '" + m + "'");

    if (!p.empty()) throw ConfigError(std::move(p));
}

std::vector<std::string> config_keys() {
    std::vector<std::string> out;
    for (const auto& f : schema()) out.push_back(f.key);
    return out;
}

std::string canonical_config(const ExperimentConfig& config) {
    std::string out;
    for (const auto& f : schema()) out += f.key + "=" + f.show(config) + "\n";
    return out;
}

std::uint64_t config_hash(const ExperimentConfig& config, const std::vector<std::string>& prefixes) {
    Fnv1a h;
    for (const auto& f : schema()) {
        bool selected = prefixes.empty();
        for (const auto& pre : prefixes) selected = selected || f.key.rfind(pre, 0) == 0;
        if (!selected) continue;
        h.update(f.key);
        h.update("=");
        h.update(f.show(config));
        h.update("\n");
    }
    return h.digest();
}

std::string config_to_yaml(const ExperimentConfig& config) {
    // Keys come in schema order with sections contiguous, so a stack of open
    // maps is enough to nest them.
    YAML::Emitter out;
    out << YAML::BeginMap;
    std::vector<std::string> open;
    for (const auto& f : schema()) {
        std::vector<std::string> parts;
        std::stringstream ss(f.key);
        for (std::string part; std::getline(ss, part, '.');) parts.push_back(part);
        std::size_t common = 0;
        while (common < open.size() && common + 1 < parts.size() && open[common] == parts[common]) ++common;
        while (open.size() > common) {
            out << YAML::EndMap;
            open.pop_back();
        }
        for (std::size_t i = common; i + 1 < parts.size(); ++i) {
            out << YAML::Key << parts[i] << YAML::Value << YAML::BeginMap;
            open.push_back(parts[i]);
        }
        out << YAML::Key << parts.back() << YAML::Value;
        f.emit(config, out);
    }
    while (!open.empty()) {
        out << YAML::EndMap;
        open.pop_back();
    }
    out << YAML::EndMap;
    return std::string(out.c_str()) + "\n";
}

}  // namespace xmd
