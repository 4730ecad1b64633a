#include "xmd/vocabulary.hpp"

#include "xmd/common.hpp"
#include "xmd/text.hpp"

#include <algorithm>
#include <fstream>
#include <map>

namespace xmd {

Vocabulary::Vocabulary() : Vocabulary(std::vector<std::string>{}) {}

Vocabulary::Vocabulary(const std::vector<std::string>& non_reserved_tokens) {
    tokens_ = {"[PAD]", "[UNK]", "[NOI]", "[MASK]", "[BOS]", "[EOS]", "[SEP]", "[CLS]"};
    for (std::size_t i = 0; i < tokens_.size(); ++i) index_.emplace(tokens_[i], static_cast<int>(i));
    for (const auto& t : non_reserved_tokens) {
        if (index_.emplace(t, static_cast<int>(tokens_.size())).second) tokens_.push_back(t);
    }
}

int Vocabulary::id(std::string_view token) const {
    auto it = index_.find(std::string(token));
    return it == index_.end() ? kUnk : it->second;
}

bool Vocabulary::contains(std::string_view token) const { return index_.count(std::string(token)) != 0; }

std::vector<int> Vocabulary::encode(const std::vector<std::string>& tokens) const {
    std::vector<int> ids;
    ids.reserve(tokens.size());
    for (const auto& t : tokens) ids.push_back(id(t));
    return ids;
}

std::uint64_t Vocabulary::hash() const {
    Fnv1a h;
    for (const auto& t : tokens_) {
        h.update(t);
        h.update("\n");
    }
    return h.digest();
}

void Vocabulary::save(const std::filesystem::path& path) const {
    std::ofstream out(path);
    if (!out) throw LoadError("cannot write vocabulary: " + path.string());
    for (std::size_t i = kReservedCount; i < tokens_.size(); ++i) out << tokens_[i] << '\n';
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw LoadError("cannot read vocabulary: " + path.string());
    std::vector<std::string> tokens;
    for (std::string line; std::getline(in, line);) {
        if (!line.empty()) tokens.push_back(line);
    }
    return Vocabulary(tokens);
}

Vocabulary build_vocabulary(const std::vector<std::string>& corpus, int max_size, int min_count) {
    if (max_size < Vocabulary::kReservedCount) throw InvalidArgument("vocabulary max_size must leave room for the 8 reserved tokens");
    if (corpus.empty()) throw InvalidArgument("build_vocabulary: empty corpus");
    std::map<std::string, int> counts;
    for (const auto& doc : corpus) {
        for (auto& t : tokenize(doc)) ++counts[t];
    }
    std::vector<std::pair<std::string, int>> ranked(counts.begin(), counts.end());
    std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
    std::vector<std::string> kept;
    for (const auto& [tok, n] : ranked) {
        if (n < min_count) continue;
        if (static_cast<int>(kept.size()) + Vocabulary::kReservedCount >= max_size) break;
        kept.push_back(tok);
    }
    return Vocabulary(kept);
}

}  // namespace xmd
