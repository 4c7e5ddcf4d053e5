#pragma once

#include <chrono>
#include <condition_variable>
#include <deque>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <system_error>
#include <utility>

#include <pthread.h>

namespace evsync {

struct Unit {};
inline bool operator==(Unit, Unit) { return true; }

namespace detail {

inline void* thread_trampoline(void* arg) {
    auto* fn = static_cast<std::function<void()>*>(arg);
    (*fn)();
    delete fn;
    return nullptr;
}

} // namespace detail

/// Runs fn on a detached thread. The runtime leaves permanently blocked
/// tasks behind (losing branches, rejector loops); small stacks keep them
/// cheap.
inline void spawn_detached(std::function<void()> fn) {
    auto* boxed = new std::function<void()>(std::move(fn));
    pthread_attr_t attr;
    pthread_attr_init(&attr);
    pthread_attr_setdetachstate(&attr, PTHREAD_CREATE_DETACHED);
    pthread_attr_setstacksize(&attr, 256 * 1024);
    pthread_t tid;
    int rc = pthread_create(&tid, &attr, detail::thread_trampoline, boxed);
    pthread_attr_destroy(&attr);
    if (rc != 0) {
        delete boxed;
        throw std::system_error(rc, std::generic_category(), "pthread_create");
    }
}

/// Single-slot blocking cell. put() blocks while the slot is full, get()
/// blocks while it is empty; each value put is taken by exactly one get.
/// Blocked putters and getters are woken in FIFO order.
///
/// Cells have reference semantics: copies share the same slot, and a cell
/// may carry other cells as its payload.
template <class T>
class Cell {
public:
    Cell() : st_(std::make_shared<State>()) {}

    void put(T value) const {
        PutWaiter w(std::move(value));
        std::unique_lock<std::mutex> lock(st_->m);
        st_->putters.push_back(&w);
        st_->pump();
        st_->cv.notify_all();
        st_->cv.wait(lock, [&] { return w.done; });
    }

    T get() const {
        GetWaiter w;
        std::unique_lock<std::mutex> lock(st_->m);
        st_->getters.push_back(&w);
        st_->pump();
        st_->cv.notify_all();
        st_->cv.wait(lock, [&] { return w.value.has_value(); });
        return std::move(*w.value);
    }

    /// Bounded get for test harnesses. An absent result consumes nothing.
    std::optional<T> get_timeout(std::chrono::milliseconds timeout) const {
        GetWaiter w;
        std::unique_lock<std::mutex> lock(st_->m);
        st_->getters.push_back(&w);
        st_->pump();
        st_->cv.notify_all();
        bool got = st_->cv.wait_for(lock, timeout,
                                    [&] { return w.value.has_value(); });
        if (!got) {
            for (auto it = st_->getters.begin(); it != st_->getters.end(); ++it) {
                if (*it == &w) {
                    st_->getters.erase(it);
                    break;
                }
            }
            return std::nullopt;
        }
        return std::move(w.value);
    }

    // Identity comparison: two cells are equal iff they share a slot.
    friend bool operator==(const Cell& a, const Cell& b) { return a.st_ == b.st_; }

private:
    struct PutWaiter {
        T value;
        bool done = false;
        explicit PutWaiter(T v) : value(std::move(v)) {}
    };
    struct GetWaiter {
        std::optional<T> value;
    };
    struct State {
        std::mutex m;
        std::condition_variable cv;
        std::optional<T> slot;
        std::deque<PutWaiter*> putters;
        std::deque<GetWaiter*> getters;

        // Moves values while progress is possible; caller holds m.
        void pump() {
            for (;;) {
                if (!slot.has_value() && !putters.empty()) {
                    PutWaiter* w = putters.front();
                    putters.pop_front();
                    slot = std::move(w->value);
                    w->done = true;
                    continue;
                }
                if (slot.has_value() && !getters.empty()) {
                    GetWaiter* w = getters.front();
                    getters.pop_front();
                    w->value = std::move(*slot);
                    slot.reset();
                    continue;
                }
                break;
            }
        }
    };

    std::shared_ptr<State> st_;
};

} // namespace evsync
