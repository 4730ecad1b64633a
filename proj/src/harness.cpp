#include "xmd/harness.hpp"

#include "xmd/common.hpp"
#include "xmd/text.hpp"

#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>

namespace xmd {

namespace fs = std::filesystem;
using json = nlohmann::json;
using ordered_json = nlohmann::ordered_json;

StageError::StageError(std::string stage, const std::string& what)
    : Error("stage '" + stage + "' failed: " + what), stage_(std::move(stage)) {}

AblationMode parse_ablation_mode(const std::string& s) {
    if (s == "plain") return AblationMode::plain;
    if (s == "adv") return AblationMode::adv;
    if (s == "full") return AblationMode::full;
    throw InvalidArgument("unknown ablation mode '" + s + "'");
}

std::string to_string(AblationMode mode) {
    switch (mode) {
        case AblationMode::plain: return "plain";
        case AblationMode::adv: return "adv";
        case AblationMode::full: return "full";
    }
    return "plain";
}

namespace {

template <typename F>
auto run_stage(const std::string& name, F&& body) -> decltype(body()) {
    try {
        return body();
    } catch (const StageError&) {
        throw;
    } catch (const std::exception& e) {
        throw StageError(name, e.what());
    }
}

std::uint64_t combine(std::initializer_list<std::uint64_t> parts) {
    Fnv1a h;
    for (auto p : parts) h.update_pod(p);
    return h.digest();
}

std::string lambda_id(double lambda) {
    char buf[32];
    for (int precision = 1; precision <= 17; ++precision) {
        std::snprintf(buf, sizeof(buf), "%.*g", precision, lambda);
        if (std::strtod(buf, nullptr) == lambda) break;
    }
    return buf;
}

std::uint64_t file_hash(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return hash_string(ss.str());
}

Averaging parse_averaging(const std::string& s) {
    if (s == "micro") return Averaging::micro;
    if (s == "weighted") return Averaging::weighted;
    return Averaging::macro;
}

ClassificationMetrics classify_records(const ClassifierBundle& bundle, const std::vector<DilutionRecord>& records,
                                       std::vector<PreparedExample> testset, Averaging averaging) {
    std::map<std::string, const DilutionRecord*> by_id;
    for (const auto& r : records) by_id.emplace(r.source_id, &r);
    for (auto& ex : testset) {
        const auto it = by_id.find(ex.id);
        if (it != by_id.end()) ex.text = it->second->final_text;
    }
    return evaluate_classifier(bundle, testset, averaging);
}

double mean_words(const std::vector<DilutionRecord>& records) {
    if (records.empty()) return 0.0;
    double total = 0;
    for (const auto& r : records) total += static_cast<double>(r.inserted_words());
    return total / static_cast<double>(records.size());
}

}  // namespace

template <typename... Args>
void Experiment::say(const Args&... args) {
    if (log_ == nullptr) return;
    *log_ << "[xmd] ";
    (*log_ << ... << args);
    *log_ << std::endl;
}

Experiment::Experiment(ExperimentConfig config, std::ostream* log) : config_(std::move(config)), root_(config_.output_dir), log_(log) {
    validate_config(config_);
    for (const char* sub : {"checkpoints", "keywords", "dilutions", "reports", "tables"}) fs::create_directories(root_ / sub);
    write_text("config.yaml", config_to_yaml(config_), "config");
}

// --- artifacts --------------------------------------------------------------------

void Experiment::record_artifact(const fs::path& relative, const std::string& kind, std::optional<std::int64_t> seed,
                                 std::uint64_t content_hash) {
    artifacts_[relative.generic_string()] = {kind, seed, content_hash};
    write_manifest();
}

void Experiment::write_manifest() const {
    ordered_json j;
    j["config_hash"] = to_hex(config_hash(config_));
    j["seeds"] = config_.seeds;
    j["artifacts"] = ordered_json::object();
    for (const auto& [path, a] : artifacts_) {
        ordered_json e;
        e["kind"] = a.kind;
        e["seed"] = a.seed ? ordered_json(*a.seed) : ordered_json(nullptr);
        e["content_hash"] = to_hex(a.hash);
        j["artifacts"][path] = e;
    }
    std::ofstream out(root_ / "manifest.json");
    out << j.dump(2) << '\n';
}

void Experiment::write_text(const fs::path& relative, const std::string& content, const std::string& kind) {
    const fs::path path = root_ / relative;
    fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw LoadError("cannot write " + path.string());
    out << content;
    out.close();
    record_artifact(relative, kind, std::nullopt, hash_string(content));
}

bool Experiment::cached(const StageInfo& stage) const {
    const fs::path marker = stage.dir / "stage.json";
    if (!fs::exists(marker)) return false;
    try {
        std::ifstream in(marker);
        json j;
        in >> j;
        return j.at("key").get<std::string>() == to_hex(stage.key);
    } catch (const json::exception&) {
        return false;
    }
}

void Experiment::mark_done(const StageInfo& stage, std::optional<std::int64_t> seed) {
    ordered_json j;
    j["stage"] = stage.name;
    j["key"] = to_hex(stage.key);
    j["config_hash"] = to_hex(config_hash(config_));
    j["seed"] = seed ? ordered_json(*seed) : ordered_json(nullptr);
    std::ofstream out(stage.dir / "stage.json");
    out << j.dump(2) << '\n';
    out.close();
    record_artifact(fs::relative(stage.dir, root_), stage.name, seed, stage.key);
}

// --- data --------------------------------------------------------------------------

const DatasetSplit& Experiment::data() {
    if (!data_) {
        run_stage("data", [&] {
            if (config_.dataset.path.empty()) {
                say("synthesizing dataset (n=", config_.dataset.synth.n, ", classes=", config_.dataset.synth.classes, ")");
                data_ = synth_dataset(config_.dataset.synth, config_.dataset.seed);
            } else {
                say("loading dataset ", config_.dataset.path);
                data_ = load_dataset(config_.dataset.path);
            }
            data_->validate();
            data_key_ = dataset_hash(*data_);
        });
    }
    return *data_;
}

std::uint64_t Experiment::data_key() {
    data();
    return *data_key_;
}

const std::vector<PreparedExample>& Experiment::train_set() {
    if (!prepared_) {
        run_stage("data", [&] {
            train_ = prepare_examples(data().train);
            val_ = prepare_examples(data().validation);
            test_ = prepare_examples(data().test);
        });
        prepared_ = true;
    }
    return train_;
}

const std::vector<PreparedExample>& Experiment::validation_set() {
    train_set();
    return val_;
}

const std::vector<PreparedExample>& Experiment::test_set() {
    train_set();
    return test_;
}

std::vector<std::string> Experiment::training_texts() {
    std::vector<std::string> out;
    for (const auto& ex : train_set()) out.push_back(ex.text);
    return out;
}

const std::vector<ImageTensor>& Experiment::test_images() {
    if (!test_images_) {
        test_images_.emplace();
        for (const auto& ex : data().test) test_images_->push_back(preprocess_image(ex.image, {}, ex.id));
    }
    return *test_images_;
}

// --- models ------------------------------------------------------------------------

std::uint64_t Experiment::classifier_key() { return combine({data_key(), config_hash(config_, {"classifier."})}); }

const ClassifierBundle& Experiment::classifiers() {
    if (bundle_) return *bundle_;
    return run_stage("classifiers", [&]() -> const ClassifierBundle& {
        const StageInfo stage{"classifiers", classifier_key(), root_ / "checkpoints" / "classifiers"};
        if (cached(stage)) {
            say("classifiers: cached");
            bundle_ = ClassifierBundle::load(stage.dir / "bundle");
            return *bundle_;
        }
        const auto& c = config_.classifier;
        const int classes = data().num_classes();
        const Vocabulary vocab = build_vocabulary(training_texts(), c.vocab_size);
        ClassifierBundle b;
        b.num_classes = classes;
        TrainingHistory h;
        TrainConfig tt = c.text_train;
        tt.seed = c.seed;
        b.text = train_text_classifier(train_set(), validation_set(), vocab, c.text, classes, tt, &h);
        say("text classifier: ", h.epochs(), " epochs, best ", h.best_epoch);
        ImageTrainConfig it = c.image_train;
        it.seed = c.seed;
        b.image = train_image_classifier(train_set(), validation_set(), c.image, classes, it, &h);
        say("image classifier: ", h.epochs(), " epochs, best ", h.best_epoch);
        TrainConfig ft = c.fusion_train;
        ft.seed = c.seed;
        train_fusion_classifier(b, train_set(), validation_set(), c.fusion, ft, &h);
        say("fusion classifier: ", h.epochs(), " epochs, best ", h.best_epoch);
        fs::create_directories(stage.dir);
        b.save(stage.dir / "bundle");
        mark_done(stage);
        ++trained_;
        bundle_ = std::move(b);
        return *bundle_;
    });
}

std::shared_ptr<const ObjectDetector> Experiment::detector() {
    if (!detector_) {
        auto det = std::make_shared<OracleDetector>(data().train);
        det->add(data().validation);
        det->add(data().test);
        detector_ = det;
    }
    return detector_;
}

std::set<std::string> Experiment::label_vocabulary() {
    if (!config_.keywords.label_vocab.empty()) return load_label_vocabulary(config_.keywords.label_vocab);
    std::set<std::string> labels;
    for (const auto& ex : data().train)
        for (const auto& o : ex.objects) labels.insert(o.label);
    if (labels.size() > kMaxLabelVocabulary)
        throw InvalidArgument("dataset has " + std::to_string(labels.size()) + " object labels; the detector vocabulary allows " +
                              std::to_string(kMaxLabelVocabulary));
    return labels;
}

std::uint64_t Experiment::keyword_key() { return combine({data_key(), config_hash(config_, {"keywords."})}); }

void Experiment::build_keywords() {
    run_stage("keywords", [&] {
        const StageInfo stage{"keywords", keyword_key(), root_ / "keywords"};
        if (cached(stage)) {
            train_kw_ = read_keyword_dump(stage.dir / "train.jsonl");
            test_kw_ = read_keyword_dump(stage.dir / "test.jsonl");
            return;
        }
        say("extracting keywords");
        const auto labels = label_vocabulary();
        auto extract = [&](const std::vector<MultimodalExample>& xs) {
            std::vector<KeywordSet> out;
            for (const auto& ex : xs) {
                KeywordSet kw;
                kw.source_id = ex.id;
                kw.text_keywords = extract_text_keywords(preprocess_text(ex.text), config_.keywords.text);
                kw.image_keywords = labels.empty() ? std::vector<std::string>{}
                                                   : extract_image_keywords(preprocess_image(ex.image, {}, ex.id), *detector(), labels,
                                                                            config_.keywords.min_area_frac);
                out.push_back(std::move(kw));
            }
            return out;
        };
        train_kw_ = extract(data().train);
        test_kw_ = extract(data().test);
        write_keyword_dump(stage.dir / "train.jsonl", *train_kw_);
        write_keyword_dump(stage.dir / "test.jsonl", *test_kw_);
        mark_done(stage);
    });
}

const std::vector<KeywordSet>& Experiment::train_keywords() {
    if (!train_kw_) build_keywords();
    return *train_kw_;
}

const std::vector<KeywordSet>& Experiment::test_keywords() {
    if (!test_kw_) build_keywords();
    return *test_kw_;
}

const JointEmbedder& Experiment::joint() {
    if (joint_) return *joint_;
    return run_stage("joint-embedder", [&]() -> const JointEmbedder& {
        const StageInfo stage{"joint-embedder", combine({data_key(), config_hash(config_, {"metrics.joint.", "classifier.seed"})}),
                              root_ / "checkpoints" / "joint"};
        if (cached(stage)) {
            joint_ = JointEmbedder::load(stage.dir / "model");
            return *joint_;
        }
        say("training joint embedder");
        JointEmbedderConfig jc = config_.metrics.joint;
        jc.seed = config_.classifier.seed;
        JointEmbedder j = train_joint_embedder(data().train, jc);
        fs::create_directories(stage.dir);
        j.save(stage.dir / "model");
        mark_done(stage);
        ++trained_;
        joint_ = std::move(j);
        return *joint_;
    });
}

const CorrespondenceModel& Experiment::correspondence() {
    if (corr_) return *corr_;
    return run_stage("correspondence", [&]() -> const CorrespondenceModel& {
        const StageInfo stage{"correspondence", combine({classifier_key(), config_hash(config_, {"metrics.correspondence."})}),
                              root_ / "checkpoints" / "correspondence"};
        if (cached(stage)) {
            corr_ = CorrespondenceModel::load(stage.dir / "model");
            return *corr_;
        }
        say("training correspondence model");
        CorrespondenceConfig cc = config_.metrics.correspondence;
        cc.seed = config_.classifier.seed;
        CorrespondenceModel m = train_correspondence_model(train_set(), classifiers(), cc);
        say("correspondence held-out accuracy ", m.heldout_accuracy);
        fs::create_directories(stage.dir);
        m.save(stage.dir / "model");
        mark_done(stage);
        ++trained_;
        corr_ = std::move(m);
        return *corr_;
    });
}

const TopicModel& Experiment::topics() {
    if (topics_) return *topics_;
    return run_stage("topic-model", [&]() -> const TopicModel& {
        const StageInfo stage{"topic-model", combine({data_key(), config_hash(config_, {"metrics.topics.", "classifier.seed"})}),
                              root_ / "checkpoints" / "topics"};
        if (cached(stage)) {
            topics_ = TopicModel::load(stage.dir / "model.json");
            return *topics_;
        }
        say("fitting topic model");
        TopicModelConfig tc = config_.metrics.topics;
        tc.seed = config_.classifier.seed;
        TopicModel tm = fit_topic_model(training_texts(), tc);
        fs::create_directories(stage.dir);
        tm.save(stage.dir / "model.json");
        mark_done(stage);
        ++trained_;
        topics_ = std::move(tm);
        return *topics_;
    });
}

std::uint64_t Experiment::stage1_key(std::int64_t seed) {
    return combine({data_key(),
                    config_hash(config_, {"generator.vocab_size", "generator.embed_dim", "generator.hidden", "generator.max_rounds",
                                          "generator.max_len", "generator.stage1.", "keywords."}),
                    static_cast<std::uint64_t>(seed)});
}

std::uint64_t Experiment::stage2_key(std::int64_t seed, double lambda, AdvObjective objective) {
    return combine({stage1_key(seed), classifier_key(), keyword_key(), config_hash(config_, {"generator.stage2."}),
                    hash_string(lambda_id(lambda)), hash_string(to_string(objective))});
}

const InsertionLM& Experiment::stage1(std::int64_t seed) {
    if (const auto it = stage1_.find(seed); it != stage1_.end()) return it->second;
    return run_stage("generator-stage1", [&]() -> const InsertionLM& {
        const StageInfo stage{"generator-stage1", stage1_key(seed), root_ / "checkpoints" / "generator" / ("s" + std::to_string(seed)) / "stage1"};
        if (cached(stage)) return stage1_.emplace(seed, InsertionLM::load(stage.dir / "model")).first->second;
        const auto& g = config_.generator;
        say("generator stage 1, seed ", seed);
        const auto texts = training_texts();
        InsertionLM lm(build_vocabulary(texts, g.vocab_size), g.lm, mix_seed(static_cast<std::uint64_t>(seed), "generator"));
        Stage1Config sc;
        sc.epochs = g.stage1_epochs;
        sc.lr = g.stage1_lr;
        sc.batch_size = g.stage1_batch_size;
        sc.seed = static_cast<std::uint64_t>(seed);
        sc.keywords = config_.keywords.text;
        const Stage1Result r = stage1_finetune(lm, texts, sc);
        if (!r.epoch_loss.empty()) say("  final L_gen ", r.epoch_loss.back());
        fs::create_directories(stage.dir);
        lm.save(stage.dir / "model");
        mark_done(stage, seed);
        ++trained_;
        return stage1_.emplace(seed, std::move(lm)).first->second;
    });
}

const InsertionLM& Experiment::stage2(std::int64_t seed, double lambda, AdvObjective objective) {
    const std::uint64_t key = stage2_key(seed, lambda, objective);
    const std::string memo = to_hex(key);
    if (const auto it = stage2_.find(memo); it != stage2_.end()) return it->second;
    return run_stage("generator-stage2", [&]() -> const InsertionLM& {
        const StageInfo stage{"generator-stage2", key,
                              root_ / "checkpoints" / "generator" / ("s" + std::to_string(seed)) /
                                  ("stage2_" + to_string(objective) + "_lambda" + lambda_id(lambda))};
        if (cached(stage)) return stage2_.emplace(memo, InsertionLM::load(stage.dir / "model")).first->second;
        InsertionLM lm = stage1(seed);
        say("generator stage 2, seed ", seed, ", lambda ", lambda_id(lambda), ", ", to_string(objective));
        Stage2Config sc;
        sc.lambda = lambda;
        sc.epochs = config_.generator.stage2_epochs;
        sc.lr = config_.generator.stage2_lr;
        sc.objective = objective;
        sc.seed = static_cast<std::uint64_t>(seed);
        const Stage2Result r = stage2_adversarial_finetune(lm, classifiers(), train_set(), train_keywords(), sc);
        if (!r.adv_loss.empty()) say("  L_gen ", r.gen_loss.back(), ", L_adv ", r.adv_loss.back());
        fs::create_directories(stage.dir);
        lm.save(stage.dir / "model");
        mark_done(stage, seed);
        ++trained_;
        return stage2_.emplace(memo, std::move(lm)).first->second;
    });
}

const NgramLM& Experiment::ngram(bool finetuned) {
    auto& slot = finetuned ? ngram_ft_ : ngram_generic_;
    if (!slot) {
        std::vector<std::string> corpus = generic_corpus();
        if (finetuned) {
            const auto texts = training_texts();
            corpus.insert(corpus.end(), texts.begin(), texts.end());
        }
        slot = std::make_unique<NgramLM>(corpus);
    }
    return *slot;
}

// --- dilutions ---------------------------------------------------------------------

std::vector<DilutionRecord> Experiment::dilutions(const std::string& method, std::int64_t seed) {
    if (method == kOriginalMethod) return {};
    const std::string memo = method + "#" + std::to_string(seed);
    if (const auto it = dilution_cache_.find(memo); it != dilution_cache_.end()) return it->second;

    auto records = run_stage("dilute:" + method, [&] {
        const auto& test = test_set();
        const auto& kws = test_keywords();
        const auto useed = static_cast<std::uint64_t>(seed);
        std::vector<DilutionRecord> out;

        if (method.rfind("xmd", 0) == 0) {
            const auto& g = config_.generator;
            const AdvObjective configured = parse_adv_objective(g.adv_objective);
            const InsertionLM* lm = nullptr;
            KeywordSource source = KeywordSource::merged;
            if (method == "xmd" || method == "xmd_full") {
                lm = &stage2(seed, g.lambda, configured);
            } else if (method == "xmd_adv") {
                lm = &stage2(seed, g.lambda, configured);
                source = KeywordSource::image;
            } else if (method == "xmd_plain") {
                lm = &stage1(seed);
                source = KeywordSource::image;
            } else if (method == "xmd_paper_bce" || method == "xmd_maximize_incorrect") {
                lm = &stage2(seed, g.lambda, parse_adv_objective(method.substr(4)));
            } else if (method.rfind("xmd_lambda_", 0) == 0) {
                lm = &stage2(seed, std::stod(method.substr(11)), configured);
            } else {
                throw InvalidArgument("unknown XMD variant '" + method + "'");
            }
            const Decode decode = g.decode == "sample" ? Decode::sample(useed) : Decode::greedy();
            for (std::size_t i = 0; i < test.size(); ++i)
                out.push_back(dilute(*lm, test[i].id, test[i].text, kws[i], decode, g.lm.max_rounds, g.lm.max_len, source, method));
            return out;
        }

        switch (parse_baseline_method(method)) {
            case BaselineMethod::random_url:
                for (const auto& ex : test) out.push_back(random_url(ex.id, ex.text, useed));
                break;
            case BaselineMethod::image_kw:
                for (std::size_t i = 0; i < test.size(); ++i) out.push_back(keyword_append(test[i].id, test[i].text, kws[i], KeywordMode::image));
                break;
            case BaselineMethod::text_kw:
                for (std::size_t i = 0; i < test.size(); ++i) out.push_back(keyword_append(test[i].id, test[i].text, kws[i], KeywordMode::text));
                break;
            case BaselineMethod::text_image_kw:
                for (std::size_t i = 0; i < test.size(); ++i) out.push_back(keyword_append(test[i].id, test[i].text, kws[i], KeywordMode::both));
                break;
            case BaselineMethod::similar_image_desc: {
                const auto& bundle = classifiers();
                nn::Matrix emb(static_cast<Eigen::Index>(test.size()), bundle.image.encoder().dim());
                std::vector<std::string> ids, texts;
                for (std::size_t i = 0; i < test.size(); ++i) {
                    emb.row(static_cast<Eigen::Index>(i)) = bundle.image_repr(test[i].stem);
                    ids.push_back(test[i].id);
                    texts.push_back(test[i].text);
                }
                out = similar_image_descriptions(ids, texts, emb);
                break;
            }
            case BaselineMethod::lm_continuation:
            case BaselineMethod::lm_continuation_ft: {
                const bool ft = parse_baseline_method(method) == BaselineMethod::lm_continuation_ft;
                const NgramLM& lm = ngram(ft);
                for (const auto& ex : test) out.push_back(lm_continuation(ex.id, ex.text, lm, ft, useed, config_.baselines.lm_max_new_words));
                break;
            }
            case BaselineMethod::caption_append: {
                const TemplateCaptioner captioner(detector(), config_.baselines.caption_max_objects);
                const auto& images = test_images();
                for (std::size_t i = 0; i < test.size(); ++i) out.push_back(caption_append(test[i].id, test[i].text, captioner.caption(images[i])));
                break;
            }
        }
        return out;
    });

    const fs::path rel = fs::path("dilutions") / (method + "_s" + std::to_string(seed) + ".jsonl");
    write_dilutions(root_ / rel, records);
    record_artifact(rel, "dilutions", seed, file_hash(root_ / rel));
    dilution_cache_[memo] = records;
    return records;
}

// --- reports -----------------------------------------------------------------------

MetricReport Experiment::report_records(const std::string& method, const std::vector<std::vector<DilutionRecord>>& per_seed) {
    return run_stage("evaluate:" + method, [&] {
        MetricDeps deps;
        deps.bundle = &classifiers();
        deps.joint = &joint();
        deps.correspondence = &correspondence();
        deps.topics = &topics();
        deps.averaging = parse_averaging(config_.classifier.averaging);
        MetricReport r = build_report(method, per_seed, test_set(), deps, config_.seeds);
        const fs::path rel = fs::path("reports") / (method + ".json");
        write_text(rel, to_json(r).dump(2) + "\n", "report");
        return r;
    });
}

MetricReport Experiment::report(const std::string& method) {
    std::vector<std::vector<DilutionRecord>> per_seed;
    for (auto seed : config_.seeds) per_seed.push_back(dilutions(method, seed));
    MetricReport r = report_records(method, per_seed);
    say(display_name(method), ": F1 ", r.mean.classification.f1, ", words ", r.mean.words_mean);
    return r;
}

void Experiment::write_table(const std::string& name, const std::vector<MetricReport>& reports) {
    write_text(fs::path("tables") / (name + ".csv"), render_csv(reports), "table");
    write_text(fs::path("tables") / (name + ".md"), render_markdown(reports), "table");
}

// --- drivers -----------------------------------------------------------------------

std::vector<MetricReport> run_pipeline(Experiment& exp) {
    std::vector<MetricReport> reports;
    for (const auto& m : exp.config().baselines.methods) reports.push_back(exp.report(m));
    exp.write_table("main", reports);
    if (exp.config().generator.report_alt_objective) {
        std::vector<MetricReport> objectives;
        for (const char* m : {"xmd_paper_bce", "xmd_maximize_incorrect"}) objectives.push_back(exp.report(m));
        exp.write_table("objectives", objectives);
    }
    return reports;
}

std::vector<MetricReport> run_ablation(Experiment& exp, const std::vector<AblationMode>& modes) {
    if (modes.empty()) throw InvalidArgument("run_ablation: no modes given");
    std::vector<MetricReport> reports;
    for (auto mode : modes) reports.push_back(exp.report("xmd_" + to_string(mode)));
    exp.write_table("ablation", reports);
    return reports;
}

std::vector<SweepRow> sweep_lambda(Experiment& exp, const std::vector<double>& lambdas) {
    if (lambdas.empty()) throw InvalidArgument("sweep_lambda: no lambdas given");
    std::vector<SweepRow> rows;
    for (double l : lambdas) {
        if (!(l >= 0)) throw InvalidArgument("sweep_lambda: lambda must be non-negative");
        rows.push_back({l, exp.report("xmd_lambda_" + lambda_id(l))});
    }
    exp.write_text("tables/sweep.csv", render_sweep_csv(rows), "table");
    exp.write_text("tables/sweep.svg", render_sweep_svg(rows), "plot");
    return rows;
}

LengthMode length_rule(const std::string& method) {
    if (method == kOriginalMethod || method == "lm_continuation" || method == "lm_continuation_ft") return LengthMode::none;
    if (method.rfind("xmd", 0) == 0) return LengthMode::truncate;
    return LengthMode::repeat;
}

std::vector<LengthControlRow> run_length_controlled(Experiment& exp, int target) {
    if (target < 1) throw InvalidArgument("length control target must be positive");
    const auto& cfg = exp.config();
    const auto averaging = parse_averaging(cfg.classifier.averaging);
    const auto& bundle = exp.classifiers();
    const auto& test = exp.test_set();
    std::vector<LengthControlRow> rows;
    for (const auto& method : cfg.baselines.methods) {
        LengthControlRow row;
        row.method = method;
        row.mode = length_rule(method);
        const auto n = static_cast<double>(cfg.seeds.size());
        for (auto seed : cfg.seeds) {
            const auto records = exp.dilutions(method, seed);
            std::vector<DilutionRecord> controlled;
            for (const auto& r : records) controlled.push_back(length_control(r, target, row.mode));
            if (method != kOriginalMethod) {
                const fs::path rel = fs::path("dilutions") / (method + "_len" + std::to_string(target) + "_s" + std::to_string(seed) + ".jsonl");
                fs::create_directories((exp.root() / rel).parent_path());
                write_dilutions(exp.root() / rel, controlled);
            }
            row.f1_before += classify_records(bundle, records, test, averaging).f1 / n;
            row.f1_after += classify_records(bundle, controlled, test, averaging).f1 / n;
            row.words_before += mean_words(records) / n;
            row.words_after += mean_words(controlled) / n;
        }
        rows.push_back(row);
    }
    exp.write_text("tables/length_control.csv", render_length_control_csv(rows), "table");
    exp.write_text("tables/length_control.md", render_length_control_markdown(rows, target), "table");
    return rows;
}

// --- rendering ---------------------------------------------------------------------

namespace {

std::string fixed(double v, int digits = 3) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(digits) << v;
    return os.str();
}

std::string fixed(const std::optional<double>& v) { return v ? fixed(*v) : ""; }

}  // namespace

std::string render_sweep_csv(const std::vector<SweepRow>& rows) {
    std::ostringstream os;
    os << "lambda,f1,f1_std,sim_text,sim_text_std,sim_img,kl_div,words_mean\n";
    for (const auto& r : rows) {
        const auto& m = r.report.mean;
        os << lambda_id(r.lambda) << ',' << fixed(m.classification.f1) << ',' << fixed(r.report.f1_std) << ',' << fixed(m.sim_text) << ','
           << fixed(r.report.sim_text_std) << ',' << fixed(m.sim_img) << ',' << fixed(m.kl_div) << ',' << fixed(m.words_mean) << '\n';
    }
    return os.str();
}

std::string render_sweep_svg(const std::vector<SweepRow>& rows) {
    constexpr double width = 560, height = 340, left = 60, right = 130, top = 30, bottom = 50;
    const double plot_w = width - left - right;
    const double plot_h = height - top - bottom;
    auto x_at = [&](std::size_t i) { return left + (rows.size() == 1 ? plot_w / 2 : plot_w * static_cast<double>(i) / static_cast<double>(rows.size() - 1)); };
    auto y_at = [&](double v) { return top + plot_h * (1.0 - std::clamp(v, 0.0, 1.0)); };

    std::ostringstream os;
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
    os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    os << "<text x=\"" << left << "\" y=\"18\">F1 and Sim_text vs lambda (mean over seeds, bars: 1 std)</text>\n";
    for (int t = 0; t <= 4; ++t) {
        const double v = t / 4.0;
        os << "<line x1=\"" << left << "\" x2=\"" << left + plot_w << "\" y1=\"" << y_at(v) << "\" y2=\"" << y_at(v) << "\" stroke=\"#ddd\"/>\n";
        os << "<text x=\"" << left - 8 << "\" y=\"" << y_at(v) + 4 << "\" text-anchor=\"end\">" << fixed(v, 2) << "</text>\n";
    }
    for (std::size_t i = 0; i < rows.size(); ++i)
        os << "<text x=\"" << x_at(i) << "\" y=\"" << top + plot_h + 20 << "\" text-anchor=\"middle\">" << lambda_id(rows[i].lambda) << "</text>\n";
    os << "<text x=\"" << left + plot_w / 2 << "\" y=\"" << height - 10 << "\" text-anchor=\"middle\">lambda</text>\n";

    auto series = [&](const char* color, const char* label, int slot, auto value, auto spread) {
        std::string points;
        for (std::size_t i = 0; i < rows.size(); ++i) {
            const auto v = value(rows[i]);
            if (!v) continue;
            points += fixed(x_at(i), 1) + "," + fixed(y_at(*v), 1) + " ";
            const double s = spread(rows[i]);
            os << "<line x1=\"" << x_at(i) << "\" x2=\"" << x_at(i) << "\" y1=\"" << y_at(*v - s) << "\" y2=\"" << y_at(*v + s) << "\" stroke=\""
               << color << "\"/>\n";
            os << "<circle cx=\"" << x_at(i) << "\" cy=\"" << y_at(*v) << "\" r=\"3\" fill=\"" << color << "\"/>\n";
        }
        os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"" << points << "\"/>\n";
        const double ly = top + 20.0 * slot;
        os << "<line x1=\"" << left + plot_w + 15 << "\" x2=\"" << left + plot_w + 35 << "\" y1=\"" << ly << "\" y2=\"" << ly << "\" stroke=\"" << color
           << "\" stroke-width=\"2\"/>\n";
        os << "<text x=\"" << left + plot_w + 40 << "\" y=\"" << ly + 4 << "\">" << label << "</text>\n";
    };
    series("#1f77b4", "F1", 0, [](const SweepRow& r) { return std::optional<double>(r.report.mean.classification.f1); },
           [](const SweepRow& r) { return r.report.f1_std; });
    series("#ff7f0e", "Sim_text", 1, [](const SweepRow& r) { return r.report.mean.sim_text; },
           [](const SweepRow& r) { return r.report.sim_text_std; });
    os << "</svg>\n";
    return os.str();
}

std::string render_length_control_markdown(const std::vector<LengthControlRow>& rows, int target) {
    std::ostringstream os;
    os << "Length control to " << target << " words.\n\n";
    os << "| Method | Control | # Words before | F1 before | # Words after | F1 after |\n";
    os << "|---|---|---|---|---|---|\n";
    for (const auto& r : rows)
        os << "| " << display_name(r.method) << " | " << (r.mode == LengthMode::none ? "--" : to_string(r.mode)) << " | "
           << fixed(r.words_before, 1) << " | " << fixed(r.f1_before) << " | " << fixed(r.words_after, 1) << " | " << fixed(r.f1_after) << " |\n";
    return os.str();
}

std::string render_length_control_csv(const std::vector<LengthControlRow>& rows) {
    std::ostringstream os;
    os << "method,control,words_before,f1_before,words_after,f1_after\n";
    for (const auto& r : rows)
        os << r.method << ',' << to_string(r.mode) << ',' << fixed(r.words_before) << ',' << fixed(r.f1_before) << ',' << fixed(r.words_after)
           << ',' << fixed(r.f1_after) << '\n';
    return os.str();
}

}  // namespace xmd
