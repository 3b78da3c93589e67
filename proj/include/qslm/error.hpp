#pragma once

#include <stdexcept>
#include <string>

namespace qslm {

// Base for every error the library raises. The CLI maps subclasses to exit codes.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Bad caller input: token ids out of range, empty datasets, malformed files.
class InputError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

// Non-finite intermediate values during a forward pass or evaluation.
class NumericError : public Error {
public:
    using Error::Error;
};

// Parameter tensors that do not match the shapes implied by the model config.
class ModelIntegrityError : public Error {
public:
    using Error::Error;
};

// Overrides that reference modules or bit-widths the hierarchy cannot resolve.
class AssignmentError : public Error {
public:
    using Error::Error;
};

class TrainingError : public Error {
public:
    TrainingError(const std::string& what, int epoch)
        : Error("epoch " + std::to_string(epoch) + ": " + what), epoch_(epoch) {}

    int epoch() const noexcept { return epoch_; }

private:
    int epoch_;
};

// Rethrows the active exception as the same library error type with `context`
// prepended to its message. Must be called from inside a catch block.
[[noreturn]] inline void rethrow_with_context(const std::string& context) {
    try {
        throw;
    } catch (const TrainingError& e) {
        throw TrainingError(context + ": " + e.what(), e.epoch());
    } catch (const NumericError& e) {
        throw NumericError(context + ": " + e.what());
    } catch (const InputError& e) {
        throw InputError(context + ": " + e.what());
    } catch (const IoError& e) {
        throw IoError(context + ": " + e.what());
    } catch (const ModelIntegrityError& e) {
        throw ModelIntegrityError(context + ": " + e.what());
    } catch (const AssignmentError& e) {
        throw AssignmentError(context + ": " + e.what());
    } catch (const Error& e) {
        throw Error(context + ": " + e.what());
    }
}

}  // namespace qslm
