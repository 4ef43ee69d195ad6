#ifndef MFTRACK_ERRORS_HPP
#define MFTRACK_ERRORS_HPP

#include <stdexcept>

namespace mft {

// Failure categories mapped to process exit codes by the CLI:
// usage 2, data 3, numeric 4.
struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace mft

#endif
