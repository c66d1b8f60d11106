# tests/test_logger.py
import logging
import os
import tempfile
import unittest
from unittest import mock

from utils.logger import close_logger, log_dir, setup_logger

NAME = 'mopg_test_logger'


class TestSetupLogger(unittest.TestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.log_file = os.path.join(self.tmp.name, 'nested', 'run.log')

    def tearDown(self):
        close_logger(NAME)
        self.tmp.cleanup()

    def test_writes_to_file_and_creates_directory(self):
        logger = setup_logger(NAME, self.log_file)
        logger.info("critic loss 0.25")
        for handler in logger.handlers:
            handler.flush()
        with open(self.log_file) as handle:
            self.assertIn(f'{NAME} - INFO - critic loss 0.25', handle.read())

    def test_second_call_does_not_stack_handlers(self):
        first = setup_logger(NAME, self.log_file)
        count = len(first.handlers)
        second = setup_logger(NAME, self.log_file)
        self.assertIs(first, second)
        self.assertEqual(len(second.handlers), count)

    def test_close_detaches_handlers_and_allows_reconfiguring(self):
        logger = setup_logger(NAME, self.log_file)
        file_handler = next(h for h in logger.handlers if isinstance(h, logging.FileHandler))
        close_logger(NAME)
        self.assertEqual(logger.handlers, [])
        self.assertIsNone(file_handler.stream)
        self.assertEqual(len(setup_logger(NAME, self.log_file).handlers), 2)

    def test_level_comes_from_environment(self):
        with mock.patch.dict(os.environ, {'MOPG_LOG_LEVEL': 'debug'}):
            logger = setup_logger(NAME, self.log_file)
        self.assertEqual(logger.level, logging.DEBUG)

    def test_unknown_level_falls_back_to_default(self):
        with mock.patch.dict(os.environ, {'MOPG_LOG_LEVEL': 'chatty'}):
            logger = setup_logger(NAME, self.log_file, level=logging.WARNING)
        self.assertEqual(logger.level, logging.WARNING)

    def test_default_file_lives_in_log_dir(self):
        with mock.patch.dict(os.environ, {'MOPG_LOG_DIR': self.tmp.name}):
            self.assertEqual(log_dir(), self.tmp.name)
            setup_logger(NAME)
        self.assertTrue(os.path.exists(os.path.join(self.tmp.name, f'{NAME}.log')))


if __name__ == '__main__':
    unittest.main()
