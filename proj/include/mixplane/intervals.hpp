#pragma once

#include <cstddef>
#include <string>

#include "mixplane/util.hpp"

namespace mixplane {

// Single pass over rows sorted by (file, sample). Calls emit(first, last) with
// the inclusive row range of every maximal run that stays in one file, has
// consecutive sample ids and identical property values (same_values(i, j)).
//
// This is the linear form of the windowed grouping: a lag difference != 1
// (or a change of file or properties) opens a new group, and each group's
// min/max sample id bound the interval.
template <class FileOf, class SampleOf, class SameValues, class Emit>
void for_each_run(std::size_t rows, FileOf&& file_of, SampleOf&& sample_of, SameValues&& same_values,
                  Emit&& emit) {
    if (rows == 0) {
        return;
    }
    std::size_t first = 0;
    for (std::size_t i = 1; i < rows; ++i) {
        const auto prev_file = file_of(i - 1);
        const auto file = file_of(i);
        const auto prev_sample = sample_of(i - 1);
        const auto sample = sample_of(i);
        if (file < prev_file || (file == prev_file && sample <= prev_sample)) {
            throw Error("detect_intervals: rows not sorted by (file_id, sample_id) at row " +
                        std::to_string(i));
        }
        const bool extends = file == prev_file && sample == prev_sample + 1 && same_values(i - 1, i);
        if (!extends) {
            emit(first, i - 1);
            first = i;
        }
    }
    emit(first, rows - 1);
}

}  // namespace mixplane
