#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace xmd {

/// Token <-> id map shared by the text encoders and the insertion generator.
/// The first kReservedCount ids are reserved markers.
class Vocabulary {
public:
    static constexpr int kPad = 0;
    static constexpr int kUnk = 1;
    static constexpr int kNoInsert = 2;
    static constexpr int kMask = 3;
    static constexpr int kBos = 4;
    static constexpr int kEos = 5;
    static constexpr int kSep = 6;
    static constexpr int kCls = 7;
    static constexpr int kReservedCount = 8;

    Vocabulary();
    explicit Vocabulary(const std::vector<std::string>& non_reserved_tokens);

    [[nodiscard]] int id(std::string_view token) const;
    [[nodiscard]] const std::string& token(int id) const { return tokens_.at(static_cast<std::size_t>(id)); }
    [[nodiscard]] bool contains(std::string_view token) const;
    [[nodiscard]] int size() const { return static_cast<int>(tokens_.size()); }
    [[nodiscard]] static bool is_reserved(int id) { return id < kReservedCount; }

    [[nodiscard]] std::vector<int> encode(const std::vector<std::string>& tokens) const;
    [[nodiscard]] std::uint64_t hash() const;
    [[nodiscard]] const std::vector<std::string>& tokens() const { return tokens_; }

    void save(const std::filesystem::path& path) const;
    static Vocabulary load(const std::filesystem::path& path);

private:
    std::vector<std::string> tokens_;
    std::unordered_map<std::string, int> index_;
};

/// Frequency vocabulary over tokenize()d strings. Tokens below `min_count` map
/// to [UNK]; ties in frequency break lexicographically.
Vocabulary build_vocabulary(const std::vector<std::string>& corpus, int max_size, int min_count = 1);

}  // namespace xmd
