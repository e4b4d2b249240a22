#pragma once

#include <unistd.h>

#include <atomic>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "mixplane/catalog.hpp"
#include "mixplane/reader.hpp"

namespace testing_support {

namespace fs = std::filesystem;

class TempDir {
public:
    TempDir() {
        static std::atomic<int> counter{0};
        path_ = fs::temp_directory_path() /
                ("mixplane-test-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
        fs::remove_all(path_);
        fs::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const fs::path& path() const { return path_; }
    fs::path operator/(const std::string& name) const { return path_ / name; }

private:
    fs::path path_;
};

inline void write_lines(const fs::path& path, const std::vector<nlohmann::json>& records) {
    mixplane::RecordWriter w(path);
    for (const auto& r : records) {
        w.write(r.dump());
    }
    w.close();
}

// The language/license example: file 1 holds three JavaScript/MIT samples
// then two Python/Apache ones, file 2 one Python/Apache sample. Sample ids
// are line numbers, so a leading filler line makes ids start at 1.
inline nlohmann::json code_record(const std::string& language, const std::string& license,
                                  const std::string& text = "x") {
    return {{"text", text}, {"language", language}, {"license", license}};
}

inline mixplane::PropertySchema code_schema() {
    mixplane::PropertyDef lang{"language", mixplane::PropertyKind::Categorical, false, true,
                               {"JavaScript", "HTML", "Python", "C"}};
    mixplane::PropertyDef lic{"license", mixplane::PropertyKind::Categorical, false, false,
                              {"MIT", "Apache", "CC", "GPL"}};
    return mixplane::PropertySchema({lang, lic});
}

}  // namespace testing_support
