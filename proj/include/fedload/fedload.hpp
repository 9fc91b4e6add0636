#pragma once

#include "fedload/client.hpp"
#include "fedload/cluster.hpp"
#include "fedload/config.hpp"
#include "fedload/data.hpp"
#include "fedload/error.hpp"
#include "fedload/eval.hpp"
#include "fedload/federated.hpp"
#include "fedload/log.hpp"
#include "fedload/neural.hpp"
#include "fedload/params.hpp"
#include "fedload/pipeline.hpp"
#include "fedload/protocol.hpp"
#include "fedload/rng.hpp"
#include "fedload/server.hpp"
#include "fedload/socket.hpp"
#include "fedload/wire.hpp"
