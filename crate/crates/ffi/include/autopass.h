/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#ifndef AUTOPASS_H
#define AUTOPASS_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/*
 Result codes. Zero is success.
 */
typedef enum AutopassStatus {
  AUTOPASS_STATUS_OK = 0,
  AUTOPASS_STATUS_INVALID_ARGUMENT = 1,
  AUTOPASS_STATUS_INVALID_SITE = 2,
  AUTOPASS_STATUS_UNSATISFIABLE_POLICY = 3,
  AUTOPASS_STATUS_POLICY_VIOLATION = 4,
  AUTOPASS_STATUS_AUTHENTICATION_FAILED = 5,
  AUTOPASS_STATUS_NOT_FOUND = 6,
  AUTOPASS_STATUS_MISSING_OBJECT = 7,
  AUTOPASS_STATUS_VAULT_MISSING = 8,
  AUTOPASS_STATUS_LOCKED = 9,
  AUTOPASS_STATUS_MALFORMED = 10,
  AUTOPASS_STATUS_IO = 11,
  AUTOPASS_STATUS_INTERNAL = 12,
  AUTOPASS_STATUS_PANIC = 13,
} AutopassStatus;

/*
 Opaque password policy handle.
 */
typedef struct AutopassPolicy AutopassPolicy;

/*
 Opaque vault handle.
 */
typedef struct AutopassVault AutopassVault;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message for the last failed call on this thread, or NULL. Valid until
 the next call on the same thread.
 */
const char *autopass_last_error(void);

/*
 Library version as a static NUL-terminated string.
 */
const char *autopass_version(void);

/*
 Wipes and frees a string returned by this library. NULL is ignored.

 # Safety
 `s` must come from this library and not have been freed.
 */
void autopass_string_free(char *s);

/*
 Normalizes a URL (or a user-chosen name when `user_site_name` is true)
 into a site key.

 # Safety
 `raw` must be a valid C string; `out` must be writable.
 */
enum AutopassStatus autopass_normalize_site(const char *raw, bool user_site_name, char **out);

/*
 Iterated SHA-256 of `data`; writes 32 bytes to `out`.

 # Safety
 `data` must point to `len` readable bytes; `out` to 32 writable bytes.
 */
enum AutopassStatus autopass_stretch(const uint8_t *data,
                                     size_t len,
                                     uint32_t iterations,
                                     uint8_t *out);

/*
 The default policy.

 # Safety
 `out` must be writable.
 */
enum AutopassStatus autopass_policy_default(struct AutopassPolicy **out);

/*
 Parses and validates a policy document.

 # Safety
 `json` must be a valid C string; `out` must be writable.
 */
enum AutopassStatus autopass_policy_from_json(const char *json, struct AutopassPolicy **out);

/*
 # Safety
 `policy` must be a valid handle; `out` must be writable.
 */
enum AutopassStatus autopass_policy_to_json(const struct AutopassPolicy *policy, char **out);

/*
 # Safety
 `policy` must be NULL or a handle not yet freed.
 */
void autopass_policy_free(struct AutopassPolicy *policy);

/*
 Encodes 32 derived bytes into a password that satisfies `policy`.

 # Safety
 `bits` must point to 32 readable bytes; `policy` must be a valid handle;
 `out` must be writable.
 */
enum AutopassStatus autopass_encode(const uint8_t *bits,
                                    const struct AutopassPolicy *policy,
                                    char **out);

/*
 Loads the vault stored in directory `home`.

 # Safety
 `home` must be a valid C string; `out` must be writable.
 */
enum AutopassStatus autopass_vault_open(const char *home, struct AutopassVault **out);

/*
 # Safety
 `vault` must be NULL or a handle not yet freed.
 */
void autopass_vault_free(struct AutopassVault *vault);

/*
 Registered sites as a JSON array of site keys.

 # Safety
 `vault` must be a valid handle; `out` must be writable.
 */
enum AutopassStatus autopass_vault_sites_json(const struct AutopassVault *vault, char **out);

/*
 Generates the password for a registered site. `object` may be NULL
 when `object_len` is 0 and the site does not use a digital object.

 # Safety
 Pointers must be valid as described; `out` must be writable.
 */
enum AutopassStatus autopass_vault_generate(const struct AutopassVault *vault,
                                            const char *user_password,
                                            const char *site,
                                            const uint8_t *object,
                                            size_t object_len,
                                            char **out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* AUTOPASS_H */
