#include "xmd/keywords.hpp"

#include "xmd/common.hpp"
#include "xmd/text.hpp"

#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <unordered_set>

namespace xmd {

OracleDetector::OracleDetector(const std::vector<MultimodalExample>& examples) { add(examples); }

void OracleDetector::add(const std::vector<MultimodalExample>& examples) {
    for (const auto& ex : examples) entries_[ex.id] = {ex.image.width, ex.image.height, ex.objects};
}

std::vector<DetectedObject> OracleDetector::detect(const ImageTensor& image) const {
    const auto it = entries_.find(image.source_id);
    if (it == entries_.end()) throw Error("oracle detector has no annotations for '" + image.source_id + "'");
    std::vector<DetectedObject> out;
    for (const auto& obj : it->second.objects) {
        Box mapped;
        if (map_box_to_tensor(obj.box, it->second.width, it->second.height, mapped)) out.push_back({obj.label, mapped, 1.0});
    }
    return out;
}

bool map_box_to_tensor(const Box& raw, int raw_width, int raw_height, Box& out) {
    const PreprocessPlan plan = plan_preprocess(raw_width, raw_height);
    const double x0 = std::clamp(raw.x * plan.scale_x - plan.crop_x, 0.0, double(kImageSide));
    const double y0 = std::clamp(raw.y * plan.scale_y - plan.crop_y, 0.0, double(kImageSide));
    const double x1 = std::clamp((raw.x + raw.w) * plan.scale_x - plan.crop_x, 0.0, double(kImageSide));
    const double y1 = std::clamp((raw.y + raw.h) * plan.scale_y - plan.crop_y, 0.0, double(kImageSide));
    if (x1 <= x0 || y1 <= y0) return false;
    out = {x0, y0, x1 - x0, y1 - y0};
    return true;
}

double similarity_ratio(const std::string& a, const std::string& b) {
    if (a.empty() && b.empty()) return 1.0;
    std::vector<std::size_t> prev(b.size() + 1);
    std::vector<std::size_t> cur(b.size() + 1);
    for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
    for (std::size_t i = 1; i <= a.size(); ++i) {
        cur[0] = i;
        for (std::size_t j = 1; j <= b.size(); ++j) {
            cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1)});
        }
        std::swap(prev, cur);
    }
    return 1.0 - static_cast<double>(prev[b.size()]) / static_cast<double>(std::max(a.size(), b.size()));
}

std::vector<std::string> extract_text_keywords(const std::string& text, const TextKeywordParams& params) {
    if (params.ngram != 1) throw InvalidArgument("only unigram keywords are supported");
    if (params.k <= 0) return {};
    std::vector<std::string> tokens;
    for (auto& t : tokenize(text)) {
        if (!is_punctuation(t)) tokens.push_back(std::move(t));
    }

    struct Stats {
        int tf = 0;
        std::size_t first = 0;
        std::set<std::string> left;
        std::set<std::string> right;
    };
    std::map<std::string, Stats> stats;
    const auto n = static_cast<std::ptrdiff_t>(tokens.size());
    const std::ptrdiff_t w = std::max(params.window, 1);
    for (std::ptrdiff_t i = 0; i < n; ++i) {
        const std::string& t = tokens[static_cast<std::size_t>(i)];
        if (is_stopword(t)) continue;
        auto [it, fresh] = stats.try_emplace(t);
        Stats& s = it->second;
        if (fresh) s.first = static_cast<std::size_t>(i);
        ++s.tf;
        for (std::ptrdiff_t d = 1; d <= w; ++d) {
            if (i - d >= 0) s.left.insert(tokens[static_cast<std::size_t>(i - d)]);
            if (i + d < n) s.right.insert(tokens[static_cast<std::size_t>(i + d)]);
        }
    }

    struct Scored {
        std::string token;
        double score;
        std::size_t first;
    };
    std::vector<Scored> ranked;
    for (const auto& [token, s] : stats) {
        const double tf = s.tf;
        const double dispersion = 0.5 * (static_cast<double>(s.left.size()) / tf + static_cast<double>(s.right.size()) / tf);
        const double position = 1.0 + 1.0 / std::log(3.0 + static_cast<double>(s.first));
        ranked.push_back({token, tf * position / (1.0 + 0.5 * dispersion), s.first});
    }
    std::sort(ranked.begin(), ranked.end(), [](const Scored& a, const Scored& b) {
        if (a.score != b.score) return a.score > b.score;
        return a.first < b.first;
    });

    std::vector<std::string> out;
    for (const auto& cand : ranked) {
        if (static_cast<int>(out.size()) >= params.k) break;
        const bool near_duplicate = std::any_of(out.begin(), out.end(), [&](const std::string& kept) {
            return similarity_ratio(kept, cand.token) > params.dedup_threshold;
        });
        if (!near_duplicate) out.push_back(cand.token);
    }
    return out;
}

std::vector<std::string> order_by_occurrence(const std::vector<std::string>& keywords, const std::string& text) {
    const auto tokens = tokenize(text);
    auto first_index = [&](const std::string& k) {
        const auto it = std::find(tokens.begin(), tokens.end(), k);
        return static_cast<std::size_t>(it - tokens.begin());
    };
    std::vector<std::string> out = keywords;
    std::stable_sort(out.begin(), out.end(), [&](const std::string& a, const std::string& b) { return first_index(a) < first_index(b); });
    return out;
}

bool passes_area_filter(const Box& box, int width, int height, double min_area_frac) {
    return box.w * box.h >= min_area_frac * static_cast<double>(width) * static_cast<double>(height);
}

std::vector<std::string> extract_image_keywords(const ImageTensor& image, const ObjectDetector& detector,
                                                const std::set<std::string>& vocab, double min_area_frac) {
    if (vocab.empty()) throw InvalidArgument("image keyword vocabulary is empty");
    std::vector<DetectedObject> detections;
    try {
        detections = detector.detect(image);
    } catch (const std::exception& e) {
        throw Error("object detection failed for '" + image.source_id + "': " + e.what());
    }
    std::map<std::string, DetectedObject> best;
    for (const auto& d : detections) {
        if (vocab.count(d.label) == 0 || !passes_area_filter(d.box, kImageSide, kImageSide, min_area_frac)) continue;
        auto [it, fresh] = best.try_emplace(d.label, d);
        if (!fresh && d.score > it->second.score) it->second = d;
    }
    std::vector<DetectedObject> kept;
    for (auto& [label, d] : best) kept.push_back(std::move(d));
    std::stable_sort(kept.begin(), kept.end(), [](const DetectedObject& a, const DetectedObject& b) { return a.box.area() > b.box.area(); });
    std::vector<std::string> out;
    for (const auto& d : kept) out.push_back(d.label);
    return out;
}

std::vector<std::string> merge_keywords(const std::vector<std::string>& text_keywords,
                                        const std::vector<std::string>& image_keywords) {
    std::vector<std::string> out;
    std::unordered_set<std::string> seen;
    for (const auto* list : {&text_keywords, &image_keywords}) {
        for (const auto& k : *list) {
            if (seen.insert(k).second) out.push_back(k);
        }
    }
    return out;
}

std::set<std::string> load_label_vocabulary(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw LoadError("cannot open label vocabulary " + path.string());
    std::set<std::string> labels;
    std::string line;
    while (std::getline(in, line)) {
        const auto words = split_words(line);
        if (words.empty()) continue;
        if (words.size() > 1) throw ParseError(path.string() + ": labels must be single tokens, got '" + line + "'");
        labels.insert(words.front());
    }
    if (labels.size() > kMaxLabelVocabulary) {
        throw ParseError(path.string() + ": at most " + std::to_string(kMaxLabelVocabulary) + " labels allowed");
    }
    return labels;
}

void save_label_vocabulary(const std::filesystem::path& path, const std::vector<std::string>& labels) {
    std::ofstream out(path);
    if (!out) throw LoadError("cannot write " + path.string());
    for (const auto& l : labels) out << l << '\n';
}

void write_keyword_dump(const std::filesystem::path& path, const std::vector<KeywordSet>& sets) {
    std::ofstream out(path);
    if (!out) throw LoadError("cannot write " + path.string());
    for (const auto& s : sets) {
        out << nlohmann::json{{"id", s.source_id}, {"text_keywords", s.text_keywords}, {"image_keywords", s.image_keywords}}.dump()
            << '\n';
    }
}

std::vector<KeywordSet> read_keyword_dump(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw LoadError("cannot open " + path.string());
    std::vector<KeywordSet> out;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        try {
            const auto j = nlohmann::json::parse(line);
            out.push_back({j.at("id").get<std::string>(), j.at("text_keywords").get<std::vector<std::string>>(),
                           j.at("image_keywords").get<std::vector<std::string>>()});
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    return out;
}

}  // namespace xmd
