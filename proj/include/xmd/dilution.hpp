#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace xmd {

/// One diluted example. final_text is always original + " " + dilution_text.
struct DilutionRecord {
    std::string source_id;
    std::string method;
    std::string original_text;  // preprocessed
    std::string dilution_text;
    std::string final_text;
    std::vector<std::string> keywords_used;
    std::vector<std::string> flags;   // e.g. "empty_keywords", "no_objects", "truncated"
    std::optional<double> score;      // method-specific, e.g. neighbour similarity

    [[nodiscard]] bool has_flag(const std::string& flag) const;
    [[nodiscard]] std::size_t inserted_words() const;
};

DilutionRecord make_record(std::string source_id, std::string method, std::string original_text, std::string dilution_text);

/// Replaces the dilution and rebuilds final_text.
void set_dilution(DilutionRecord& record, std::string dilution_text);

void write_dilutions(const std::filesystem::path& path, const std::vector<DilutionRecord>& records);
std::vector<DilutionRecord> read_dilutions(const std::filesystem::path& path);

}  // namespace xmd
