#ifndef MIL_ERRORS_HPP
#define MIL_ERRORS_HPP

#include <cstdint>
#include <stdexcept>
#include <string>

namespace mil {

// Base for every error the library throws on purpose.
struct MilError : std::runtime_error {
    explicit MilError(const std::string& msg) : std::runtime_error(msg) {}
};

// A tensor value or an operation result is NaN/Inf, or an input is out of domain.
struct InvalidValue : MilError {
    explicit InvalidValue(const std::string& msg) : MilError("InvalidValue: " + msg) {}
};

// Operand shapes do not match the operation contract.
struct ShapeError : MilError {
    explicit ShapeError(const std::string& msg) : MilError("ShapeError: " + msg) {}
};

// An operation was called out of order (e.g. backward before forward).
struct StateError : MilError {
    explicit StateError(const std::string& msg) : MilError("StateError: " + msg) {}
};

// A configuration value violates its invariant.
struct InvalidConfig : MilError {
    explicit InvalidConfig(const std::string& msg) : MilError("InvalidConfig: " + msg) {}
};

// A bag has too few instances for the requested operation.
struct TooFewInstances : MilError {
    explicit TooFewInstances(const std::string& msg) : MilError("TooFewInstances: " + msg) {}
};

// A file does not parse as the expected binary/text format.
struct FormatError : MilError {
    explicit FormatError(const std::string& msg) : MilError("FormatError: " + msg) {}
};

// A raw label is outside the accepted grade set.
struct InvalidLabel : MilError {
    explicit InvalidLabel(const std::string& msg) : MilError("InvalidLabel: " + msg) {}
};

// A scored set (or a bootstrap resample budget) cannot support the statistic.
struct DegenerateInput : MilError {
    explicit DegenerateInput(const std::string& msg) : MilError("DegenerateInput: " + msg) {}
};

// Instance coordinates violate the grid contract (duplicates, missing).
struct InvalidCoords : MilError {
    explicit InvalidCoords(const std::string& msg) : MilError("InvalidCoords: " + msg) {}
};

// Training produced a non-finite loss or activation.
struct DivergenceError : MilError {
    DivergenceError(std::size_t epoch_, const std::string& bag_id_, const std::string& msg)
        : MilError("DivergenceError: epoch " + std::to_string(epoch_) + ", bag '" + bag_id_ +
                   "': " + msg),
          epoch(epoch_),
          bag_id(bag_id_) {}
    std::size_t epoch;
    std::string bag_id;
};

}  // namespace mil

#endif  // MIL_ERRORS_HPP
