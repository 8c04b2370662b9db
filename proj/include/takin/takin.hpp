#pragma once

#include "takin/base64.hpp"
#include "takin/client.hpp"
#include "takin/codec.hpp"
#include "takin/config.hpp"
#include "takin/eval.hpp"
#include "takin/eval_io.hpp"
#include "takin/kvcache.hpp"
#include "takin/lora.hpp"
#include "takin/model.hpp"
#include "takin/net.hpp"
#include "takin/protocol.hpp"
#include "takin/quant.hpp"
#include "takin/registry.hpp"
#include "takin/rng.hpp"
#include "takin/scheduler.hpp"
#include "takin/server.hpp"
#include "takin/tensor.hpp"
#include "takin/vocab.hpp"
