#include "xmd/corpus.hpp"

#include "xmd/common.hpp"
#include "xmd/text.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <random>
#include <set>
#include <unordered_map>

#include "json.hpp"

namespace xmd {

using nlohmann::json;
namespace fs = std::filesystem;

void DatasetSplit::validate() const {
    std::set<std::string> ids;
    for (const auto* part : {&train, &validation, &test}) {
        for (const auto& ex : *part) {
            if (!ids.insert(ex.id).second) throw InvalidArgument("duplicate example id: " + ex.id);
            if (ex.label < 0 || ex.label >= num_classes()) {
                throw InvalidArgument("example " + ex.id + " has label outside the declared vocabulary");
            }
        }
    }
}

DatasetSplit load_dataset(const fs::path& path, DatasetFormat format) {
    if (format != DatasetFormat::jsonl) throw InvalidArgument("unsupported dataset format");
    std::ifstream in(path);
    if (!in) throw LoadError("cannot open dataset: " + path.string());

    DatasetSplit data;
    bool declared = false;
    std::unordered_map<std::string, int> label_index;
    std::set<std::string> seen_ids;
    const fs::path base = path.parent_path();

    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        const std::string where = path.string() + ":" + std::to_string(line_no);
        json rec;
        try {
            rec = json::parse(line);
        } catch (const json::parse_error& e) {
            throw ParseError(where + ": malformed JSON: " + e.what());
        }
        if (!rec.is_object()) throw ParseError(where + ": record is not an object");
        if (rec.contains("label_names")) {
            if (line_no != 1 && !data.label_names.empty()) throw ParseError(where + ": label_names must come first");
            for (const auto& name : rec.at("label_names")) {
                label_index.emplace(name.get<std::string>(), static_cast<int>(data.label_names.size()));
                data.label_names.push_back(name.get<std::string>());
            }
            declared = true;
            continue;
        }
        for (const char* field : {"id", "split", "image_path", "text", "label"}) {
            if (!rec.contains(field)) throw ParseError(where + ": missing field '" + field + "'");
        }
        MultimodalExample ex;
        try {
            ex.id = rec.at("id").get<std::string>();
            ex.text = rec.at("text").get<std::string>();
            ex.image_path = rec.at("image_path").get<std::string>();
        } catch (const json::exception& e) {
            throw ParseError(where + ": " + e.what());
        }
        if (!seen_ids.insert(ex.id).second) throw ParseError(where + ": duplicate id '" + ex.id + "'");

        const json& label = rec.at("label");
        if (label.is_number_integer()) {
            const int idx = label.get<int>();
            if (!declared || idx < 0 || idx >= static_cast<int>(data.label_names.size())) {
                throw ParseError(where + ": label index " + std::to_string(idx) + " outside declared vocabulary");
            }
            ex.label = idx;
        } else if (label.is_string()) {
            const auto name = label.get<std::string>();
            auto it = label_index.find(name);
            if (it == label_index.end()) {
                if (declared) throw ParseError(where + ": label '" + name + "' outside declared vocabulary");
                it = label_index.emplace(name, static_cast<int>(data.label_names.size())).first;
                data.label_names.push_back(name);
            }
            ex.label = it->second;
        } else {
            throw ParseError(where + ": label must be a string or integer");
        }

        if (rec.contains("objects")) {
            for (const auto& o : rec.at("objects")) {
                ObjectAnnotation obj;
                obj.label = o.at("label").get<std::string>();
                const auto& b = o.at("box");
                obj.box = {b.at(0).get<double>(), b.at(1).get<double>(), b.at(2).get<double>(), b.at(3).get<double>()};
                ex.objects.push_back(std::move(obj));
            }
        }

        const fs::path image_file = base / ex.image_path;
        if (!fs::exists(image_file)) throw LoadError("example " + ex.id + ": missing image file " + image_file.string());
        try {
            ex.image = decode_image(image_file);
        } catch (const LoadError& e) {
            throw LoadError("example " + ex.id + ": " + e.what());
        }

        const auto split = rec.at("split").get<std::string>();
        if (split == "train") {
            data.train.push_back(std::move(ex));
        } else if (split == "val" || split == "validation" || split == "dev") {
            data.validation.push_back(std::move(ex));
        } else if (split == "test") {
            data.test.push_back(std::move(ex));
        } else {
            throw ParseError(where + ": unknown split '" + split + "'");
        }
    }
    const double total = static_cast<double>(data.train.size() + data.validation.size() + data.test.size());
    if (total > 0) {
        data.ratios = {data.train.size() / total, data.validation.size() / total, data.test.size() / total};
    }
    return data;
}

void save_dataset(const DatasetSplit& data, const fs::path& dir) {
    fs::create_directories(dir / "images");
    std::ofstream out(dir / "dataset.jsonl");
    if (!out) throw LoadError("cannot write dataset under " + dir.string());
    out << json{{"label_names", data.label_names}}.dump() << '\n';
    const std::pair<const char*, const std::vector<MultimodalExample>*> parts[] = {
        {"train", &data.train}, {"val", &data.validation}, {"test", &data.test}};
    for (const auto& [split, examples] : parts) {
        for (const auto& ex : *examples) {
            const std::string rel = "images/" + ex.id + ".png";
            write_png(dir / rel, ex.image);
            json objects = json::array();
            for (const auto& o : ex.objects) {
                objects.push_back({{"label", o.label}, {"box", {o.box.x, o.box.y, o.box.w, o.box.h}}});
            }
            json rec = {{"id", ex.id}, {"split", split}, {"image_path", rel},
                        {"text", ex.text}, {"label", ex.label}, {"objects", objects}};
            out << rec.dump() << '\n';
        }
    }
}

DatasetSplit split_dataset(std::vector<MultimodalExample> examples, const SplitRatios& ratios, std::uint64_t seed) {
    const double sum = ratios.train + ratios.validation + ratios.test;
    if (std::abs(sum - 1.0) > 1e-9) throw InvalidArgument("split ratios must sum to 1");
    if (ratios.train < 0 || ratios.validation < 0 || ratios.test < 0) throw InvalidArgument("split ratios must be non-negative");
    if (examples.size() < 3) throw InvalidArgument("split_dataset needs at least 3 examples");

    std::mt19937_64 rng(seed);
    std::shuffle(examples.begin(), examples.end(), rng);
    const auto n = static_cast<double>(examples.size());
    const auto n_val = static_cast<std::size_t>(std::floor(n * ratios.validation + 1e-9));
    const auto n_test = static_cast<std::size_t>(std::floor(n * ratios.test + 1e-9));
    const std::size_t n_train = examples.size() - n_val - n_test;

    DatasetSplit out;
    out.ratios = ratios;
    auto it = std::make_move_iterator(examples.begin());
    out.train.assign(it, it + static_cast<std::ptrdiff_t>(n_train));
    out.validation.assign(it + static_cast<std::ptrdiff_t>(n_train), it + static_cast<std::ptrdiff_t>(n_train + n_val));
    out.test.assign(it + static_cast<std::ptrdiff_t>(n_train + n_val), std::make_move_iterator(examples.end()));
    return out;
}

// --- synthetic task ---------------------------------------------------------

namespace {

const std::vector<std::string>& content_pool() {
    static const std::vector<std::string> words = {
        "flood", "rain", "storm", "river", "levee", "surge", "rescue", "volunteer", "donation", "shelter",
        "relief", "aid", "supplies", "injured", "victim", "hospital", "missing", "casualty", "collapse",
        "damage", "debris", "rubble", "outage", "wildfire", "smoke", "evacuate", "ambulance", "medic",
        "blanket", "food", "convoy", "pledge", "fundraiser", "charity", "cracked", "destroyed", "wrecked",
        "flooded", "burned", "ashes", "tornado", "hurricane", "quake", "aftershock", "landslide", "mudslide",
        "happy", "smile", "sunny", "party", "joy", "gore", "creepy", "rage", "angry", "scary", "haunted",
        "furious", "cheerful", "festival", "wedding", "picnic", "ghost", "shadow", "eerie", "riot", "protest",
        "clash", "fight", "crowd", "mourning", "funeral", "memorial", "prayer", "vigil", "hope", "recovery",
        "rebuild", "repair", "cleanup", "sandbag", "pump", "generator", "water", "drought", "heatwave"};
    return words;
}

const std::vector<std::string>& object_pool() {
    static const std::vector<std::string> words = {
        "truck", "tree", "boat", "house", "car", "man", "dog", "road", "building", "sign", "fence", "pole",
        "helicopter", "tent", "bus", "roof", "window", "door", "chair", "bag", "box", "bottle", "bike",
        "flag", "horse", "cat", "bench", "lamp", "table", "plate", "woman", "child", "jacket", "hat",
        "umbrella", "wire", "rock", "mountain", "cloud", "sky", "street", "sidewalk", "wall", "tower",
        "train", "plane", "kite", "bird", "cow", "sheep", "bed", "pillow", "shirt", "shoe", "glass",
        "cup", "phone", "screen", "clock", "vase", "book", "toy", "ball", "leaf", "flower", "grass"};
    return words;
}

const std::vector<std::string> kDet = {"the", "a", "this", "our"};
const std::vector<std::string> kVerb = {"was", "is", "seen", "reported", "spotted", "found"};
const std::vector<std::string> kPrep = {"near", "by", "at", "beside", "behind"};
const std::vector<std::string> kAdv = {"today", "again", "now", "tonight", "early"};

std::array<std::uint8_t, 3> hue_color(double hue) {
    const double s = 0.85;
    const double v = 0.92;
    const double h6 = hue * 6.0;
    const int sector = static_cast<int>(h6) % 6;
    const double f = h6 - std::floor(h6);
    const double p = v * (1 - s);
    const double q = v * (1 - s * f);
    const double t = v * (1 - s * (1 - f));
    double r = 0, g = 0, b = 0;
    switch (sector) {
        case 0: r = v, g = t, b = p; break;
        case 1: r = q, g = v, b = p; break;
        case 2: r = p, g = v, b = t; break;
        case 3: r = p, g = q, b = v; break;
        case 4: r = t, g = p, b = v; break;
        default: r = v, g = p, b = q; break;
    }
    return {static_cast<std::uint8_t>(std::lround(r * 255)), static_cast<std::uint8_t>(std::lround(g * 255)),
            static_cast<std::uint8_t>(std::lround(b * 255))};
}

template <typename T>
const T& pick(const std::vector<T>& v, std::mt19937_64& rng) {
    return v[std::uniform_int_distribution<std::size_t>(0, v.size() - 1)(rng)];
}

double uniform01(std::mt19937_64& rng) { return std::uniform_real_distribution<double>(0.0, 1.0)(rng); }

void fill_rect(RawImage& img, int x, int y, int w, int h, const std::array<std::uint8_t, 3>& color, std::mt19937_64& rng) {
    std::uniform_int_distribution<int> jitter(-12, 12);
    for (int yy = y; yy < y + h; ++yy) {
        for (int xx = x; xx < x + w; ++xx) {
            const std::size_t o = (static_cast<std::size_t>(yy) * img.width + xx) * 3;
            for (int c = 0; c < 3; ++c) img.rgb[o + c] = static_cast<std::uint8_t>(std::clamp(color[c] + jitter(rng), 0, 255));
        }
    }
}

}  // namespace

std::vector<std::string> SynthLexicon::all_motif_labels() const {
    std::vector<std::string> out;
    for (const auto& labels : motif_labels) out.insert(out.end(), labels.begin(), labels.end());
    return out;
}

SynthLexicon synth_lexicon(const SynthSpec& spec, std::uint64_t seed) {
    if (spec.classes < 2) throw InvalidArgument("synth_dataset: classes must be >= 2");
    std::mt19937_64 rng(mix_seed(seed, "lexicon"));
    std::vector<std::string> words = content_pool();
    std::vector<std::string> objects = object_pool();
    std::shuffle(words.begin(), words.end(), rng);
    std::shuffle(objects.begin(), objects.end(), rng);

    SynthLexicon lex;
    lex.class_words.resize(spec.classes);
    lex.motif_labels.resize(spec.classes);
    std::size_t wi = 0;
    std::size_t oi = 0;
    for (int c = 0; c < spec.classes; ++c) {
        for (int j = 0; j < spec.vocab_per_class; ++j, ++wi) {
            lex.class_words[c].push_back(wi < words.size() ? words[wi] : "term" + std::to_string(c) + "x" + std::to_string(j));
        }
        for (int j = 0; j < spec.image_motifs_per_class; ++j, ++oi) {
            lex.motif_labels[c].push_back(oi < objects.size() ? objects[oi] : "object" + std::to_string(c) + "x" + std::to_string(j));
        }
    }
    const std::size_t total = static_cast<std::size_t>(spec.classes) * spec.image_motifs_per_class;
    // Each class owns a contiguous band of hues.
    for (std::size_t k = 0; k < total; ++k) lex.motif_colors.push_back(hue_color(static_cast<double>(k) / static_cast<double>(total)));
    return lex;
}

DatasetSplit synth_dataset(const SynthSpec& spec, std::uint64_t seed) {
    if (spec.classes < 2) throw InvalidArgument("synth_dataset: classes must be >= 2");
    if (spec.n < 30) throw InvalidArgument("synth_dataset: n must be >= 30");
    if (spec.vocab_per_class < 2 || spec.image_motifs_per_class < 1) throw InvalidArgument("synth_dataset: vocabulary too small");
    if (spec.raw_width < 64 || spec.raw_height < 64) throw InvalidArgument("synth_dataset: raw image too small");

    const SynthLexicon lex = synth_lexicon(spec, seed);
    std::mt19937_64 rng(mix_seed(seed, "examples"));

    // Objects must survive the center crop, so they live inside the central square.
    const int side = std::min(spec.raw_width, spec.raw_height);
    const int x0 = (spec.raw_width - side) / 2 + 2;
    const int y0 = (spec.raw_height - side) / 2 + 2;
    const int inner = side - 4;
    const int min_motif = static_cast<int>(std::ceil(std::sqrt(0.12) * side));
    const int max_motif = std::max(min_motif + 1, static_cast<int>(0.6 * side));

    auto class_word = [&](int c) -> const std::string& {
        if (uniform01(rng) < spec.text_noise) {
            int other = std::uniform_int_distribution<int>(0, spec.classes - 2)(rng);
            if (other >= c) ++other;
            return pick(lex.class_words[other], rng);
        }
        return pick(lex.class_words[c], rng);
    };

    std::vector<MultimodalExample> examples;
    examples.reserve(spec.n);
    for (int i = 0; i < spec.n; ++i) {
        MultimodalExample ex;
        ex.label = i % spec.classes;
        char id[32];
        std::snprintf(id, sizeof(id), "syn%05d", i);
        ex.id = id;
        const int c = ex.label;

        // Image: muted background, one or two class motifs, small distractors.
        RawImage& img = ex.image;
        img.width = spec.raw_width;
        img.height = spec.raw_height;
        img.rgb.resize(static_cast<std::size_t>(img.width) * img.height * 3);
        const int bg = std::uniform_int_distribution<int>(70, 150)(rng);
        std::uniform_int_distribution<int> px_noise(-6, 6);
        for (std::size_t p = 0; p < img.rgb.size(); ++p) img.rgb[p] = static_cast<std::uint8_t>(std::clamp(bg + px_noise(rng), 0, 255));

        const int n_motifs = uniform01(rng) < 0.5 ? 1 : 2;
        std::vector<std::size_t> motif_ids;  // flattened motif indices
        std::vector<int> candidates(spec.image_motifs_per_class);
        for (int j = 0; j < spec.image_motifs_per_class; ++j) candidates[j] = j;
        std::shuffle(candidates.begin(), candidates.end(), rng);
        for (int m = 0; m < n_motifs && m < spec.image_motifs_per_class; ++m) {
            int cls = c;
            int j = candidates[m];
            if (m > 0 && uniform01(rng) < spec.image_noise) {
                cls = std::uniform_int_distribution<int>(0, spec.classes - 2)(rng);
                if (cls >= c) ++cls;
                j = std::uniform_int_distribution<int>(0, spec.image_motifs_per_class - 1)(rng);
            }
            motif_ids.push_back(static_cast<std::size_t>(cls) * spec.image_motifs_per_class + j);
        }
        const auto all_labels = lex.all_motif_labels();
        std::vector<int> sizes;
        for (std::size_t m = 0; m < motif_ids.size(); ++m) {
            // The primary motif is drawn larger so area ordering puts it first.
            const int lo = m == 0 ? (min_motif + max_motif) / 2 : min_motif;
            const int hi = m == 0 ? max_motif : (min_motif + max_motif) / 2 - 1;
            const int w = std::uniform_int_distribution<int>(lo, std::max(lo, hi))(rng);
            const int h = std::uniform_int_distribution<int>(lo, std::max(lo, hi))(rng);
            const int x = x0 + std::uniform_int_distribution<int>(0, inner - w)(rng);
            const int y = y0 + std::uniform_int_distribution<int>(0, inner - h)(rng);
            fill_rect(img, x, y, w, h, lex.motif_colors[motif_ids[m]], rng);
            ex.objects.push_back({all_labels[motif_ids[m]], {double(x), double(y), double(w), double(h)}});
        }
        const int n_distract = std::uniform_int_distribution<int>(0, 2)(rng);
        for (int d = 0; d < n_distract; ++d) {
            const std::size_t k = std::uniform_int_distribution<std::size_t>(0, all_labels.size() - 1)(rng);
            const int w = std::uniform_int_distribution<int>(6, side / 8)(rng);
            const int h = std::uniform_int_distribution<int>(6, side / 8)(rng);
            const int x = x0 + std::uniform_int_distribution<int>(0, inner - w)(rng);
            const int y = y0 + std::uniform_int_distribution<int>(0, inner - h)(rng);
            fill_rect(img, x, y, w, h, lex.motif_colors[k], rng);
            ex.objects.push_back({all_labels[k], {double(x), double(y), double(w), double(h)}});
        }

        // Text: one or two templated sentences naming class words and the primary object.
        const std::string& obj = ex.objects.front().label;
        auto sentence = [&](int kind) {
            std::vector<std::string> s;
            switch (kind) {
                case 0:
                    s = {pick(kDet, rng), class_word(c), pick(kVerb, rng), pick(kPrep, rng), pick(kDet, rng), obj, pick(kAdv, rng)};
                    break;
                case 1:
                    s = {class_word(c), "and", class_word(c), pick(kVerb, rng), pick(kPrep, rng), "the", obj};
                    break;
                case 2:
                    s = {pick(kDet, rng), obj, pick(kVerb, rng), class_word(c), pick(kAdv, rng)};
                    break;
                default:
                    s = {pick(kDet, rng), class_word(c), class_word(c), pick(kVerb, rng), pick(kAdv, rng)};
                    break;
            }
            return join(s) + ".";
        };
        ex.text = sentence(std::uniform_int_distribution<int>(0, 2)(rng));
        if (uniform01(rng) < 0.6) ex.text += " " + sentence(std::uniform_int_distribution<int>(1, 3)(rng));
        examples.push_back(std::move(ex));
    }

    DatasetSplit out = split_dataset(std::move(examples), SplitRatios{}, mix_seed(seed, "split"));
    for (int c = 0; c < spec.classes; ++c) out.label_names.push_back("class" + std::to_string(c));
    return out;
}

std::uint64_t dataset_hash(const DatasetSplit& data) {
    Fnv1a h;
    for (const auto& name : data.label_names) h.update(name);
    for (const auto* part : {&data.train, &data.validation, &data.test}) {
        h.update_pod(part->size());
        for (const auto& ex : *part) {
            h.update(ex.id);
            h.update(ex.text);
            h.update_pod(ex.label);
            h.update_pod(ex.image.width);
            h.update_pod(ex.image.height);
            h.update(ex.image.rgb.data(), ex.image.rgb.size());
            for (const auto& o : ex.objects) {
                h.update(o.label);
                h.update_pod(o.box);
            }
        }
    }
    return h.digest();
}

}  // namespace xmd
