#include "xmd/dilution.hpp"

#include "xmd/common.hpp"
#include "xmd/text.hpp"

#include "json.hpp"

#include <algorithm>
#include <fstream>

namespace xmd {

bool DilutionRecord::has_flag(const std::string& flag) const {
    return std::find(flags.begin(), flags.end(), flag) != flags.end();
}

std::size_t DilutionRecord::inserted_words() const { return word_count(dilution_text); }

DilutionRecord make_record(std::string source_id, std::string method, std::string original_text, std::string dilution_text) {
    DilutionRecord r;
    r.source_id = std::move(source_id);
    r.method = std::move(method);
    r.original_text = std::move(original_text);
    set_dilution(r, std::move(dilution_text));
    return r;
}

void set_dilution(DilutionRecord& record, std::string dilution_text) {
    record.dilution_text = std::move(dilution_text);
    record.final_text = record.original_text + " " + record.dilution_text;
}

void write_dilutions(const std::filesystem::path& path, const std::vector<DilutionRecord>& records) {
    std::ofstream out(path);
    if (!out) throw LoadError("cannot write " + path.string());
    for (const auto& r : records) {
        nlohmann::ordered_json j{{"source_id", r.source_id},
                                 {"method", r.method},
                                 {"original_text", r.original_text},
                                 {"dilution_text", r.dilution_text},
                                 {"final_text", r.final_text},
                                 {"keywords_used", r.keywords_used},
                                 {"flags", r.flags}};
        j["score"] = r.score ? nlohmann::ordered_json(*r.score) : nlohmann::ordered_json(nullptr);
        out << j.dump() << '\n';
    }
}

std::vector<DilutionRecord> read_dilutions(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw LoadError("cannot open " + path.string());
    std::vector<DilutionRecord> out;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        try {
            const auto j = nlohmann::json::parse(line);
            DilutionRecord r;
            r.source_id = j.at("source_id").get<std::string>();
            r.method = j.at("method").get<std::string>();
            r.original_text = j.at("original_text").get<std::string>();
            r.dilution_text = j.at("dilution_text").get<std::string>();
            r.final_text = j.at("final_text").get<std::string>();
            r.keywords_used = j.at("keywords_used").get<std::vector<std::string>>();
            r.flags = j.at("flags").get<std::vector<std::string>>();
            if (j.contains("score") && !j.at("score").is_null()) r.score = j.at("score").get<double>();
            out.push_back(std::move(r));
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    return out;
}

}  // namespace xmd
